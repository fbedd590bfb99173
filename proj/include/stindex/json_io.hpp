#pragma once

#include <cmath>
#include <cstdio>
#include <string>

#include <json.hpp>

namespace stindex {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace detail {

inline void append_fixed(std::string& out, double v, int precision) {
    if (!std::isfinite(v)) {
        out += "null";
        return;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    std::string s(buf);
    // "-0.000000" would make output depend on the sign of a rounding residue.
    if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    out += s;
}

template <typename Json>
void dump_stable_into(std::string& out, const Json& j, int precision) {
    switch (j.type()) {
        case Json::value_t::object: {
            out.push_back('{');
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out.push_back(',');
                first = false;
                out += Json(it.key()).dump();
                out.push_back(':');
                dump_stable_into(out, it.value(), precision);
            }
            out.push_back('}');
            break;
        }
        case Json::value_t::array: {
            out.push_back('[');
            bool first = true;
            for (const auto& v : j) {
                if (!first) out.push_back(',');
                first = false;
                dump_stable_into(out, v, precision);
            }
            out.push_back(']');
            break;
        }
        case Json::value_t::number_float:
            append_fixed(out, j.template get<double>(), precision);
            break;
        default:
            out += j.dump();
    }
}

}  // namespace detail

/// Compact JSON with every float printed at fixed precision, so output bytes
/// depend only on the values. Key order follows the json type: sorted for
/// `json`, insertion order for `ordered_json`.
template <typename Json>
std::string dump_stable(const Json& j, int precision = 6) {
    std::string out;
    detail::dump_stable_into(out, j, precision);
    return out;
}

}  // namespace stindex
