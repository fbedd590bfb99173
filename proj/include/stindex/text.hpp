#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stindex/error.hpp"

namespace stindex::text {

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::string_view trim_view(std::string_view s) {
    const auto* ws = " \t\r\n\f\v";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    }
    return true;
}

/// Collapses runs of whitespace to one space and trims the ends.
inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        }
    }
    return out;
}

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits. Stable across
/// platforms; used for fixture keys and content-derived ids.
inline std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

/// Byte offsets of every Unicode scalar value in a UTF-8 string, plus a
/// terminal entry equal to the byte length. Malformed sequences count one
/// scalar per byte.
class Utf8Index {
public:
    explicit Utf8Index(std::string_view s) {
        offsets_.reserve(s.size() + 1);
        std::size_t i = 0;
        while (i < s.size()) {
            offsets_.push_back(i);
            i += sequence_length(s, i);
        }
        offsets_.push_back(s.size());
    }

    /// Number of scalar values.
    std::size_t size() const noexcept { return offsets_.size() - 1; }

    std::size_t byte_offset(std::size_t char_index) const { return offsets_.at(char_index); }

    /// Scalar index of the scalar that starts at or contains `byte`.
    std::size_t char_index(std::size_t byte) const {
        auto it = std::upper_bound(offsets_.begin(), offsets_.end(), byte);
        return static_cast<std::size_t>(std::distance(offsets_.begin(), it)) - 1;
    }

private:
    static std::size_t sequence_length(std::string_view s, std::size_t i) {
        auto c = static_cast<unsigned char>(s[i]);
        std::size_t n = 1;
        if ((c & 0xE0) == 0xC0) n = 2;
        else if ((c & 0xF0) == 0xE0) n = 3;
        else if ((c & 0xF8) == 0xF0) n = 4;
        if (i + n > s.size()) return 1;
        for (std::size_t k = 1; k < n; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 1;
        }
        return n;
    }

    std::vector<std::size_t> offsets_;
};

inline std::size_t char_length(std::string_view s) { return Utf8Index(s).size(); }

/// Substring by scalar offsets [start, end).
inline std::string char_slice(std::string_view s, const Utf8Index& idx, std::size_t start,
                              std::size_t end) {
    auto b = idx.byte_offset(start);
    auto e = idx.byte_offset(end);
    return std::string(s.substr(b, e - b));
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace stindex::text
