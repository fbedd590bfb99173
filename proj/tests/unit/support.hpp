#pragma once

#include <gtest/gtest.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "stindex/cli.hpp"
#include "stindex/stindex.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path data_dir() { return STINDEX_DATA_DIR; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("stindex-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

/// Backend answering from a callback; counts calls.
class ScriptBackend : public stindex::Backend {
public:
    using Reply = std::function<std::string(const stindex::CompletionRequest&)>;
    explicit ScriptBackend(Reply reply) : Backend(8), reply_(std::move(reply)) {}

    std::string model() const override { return "script"; }
    int calls() const { return calls_; }

protected:
    stindex::CompletionResponse do_complete(const stindex::CompletionRequest& req) override {
        ++calls_;
        stindex::CompletionResponse res;
        res.text = reply_(req);
        return res;
    }

private:
    Reply reply_;
    std::atomic<int> calls_{0};
};

inline bool is_reflection(const stindex::CompletionRequest& req) { return req.system == stindex::kReflectionPreamble; }

/// The 0-based chunk index named in an extraction prompt's state block.
inline std::size_t prompt_chunk(const stindex::CompletionRequest& req) {
    auto pos = req.user.find("\nChunk: ");
    return std::stoul(req.user.substr(pos + 8)) - 1;
}

inline stindex::Chunk make_chunk(std::string text, std::string doc_id = "doc", std::size_t index = 0,
                                 std::size_t start = 0) {
    stindex::Chunk c;
    c.doc_id = std::move(doc_id);
    c.chunk_index = index;
    c.char_start = start;
    c.char_end = start + stindex::text::char_length(text);
    c.text = std::move(text);
    return c;
}

inline stindex::SourceDocument make_doc(std::string body, std::string doc_id = "doc") {
    stindex::SourceDocument d;
    d.doc_id = std::move(doc_id);
    d.body = std::move(body);
    return d;
}

inline std::shared_ptr<const stindex::Geocoder> fixture_geocoder(stindex::GeocoderOptions opts = {}) {
    auto g = std::make_shared<const stindex::Gazetteer>(stindex::Gazetteer::load(data_dir() / "gazetteer.tsv"));
    return std::make_shared<const stindex::Geocoder>(g, std::move(opts));
}

/// Loopback HTTP server on a free port, stopped on destruction.
class MockServer {
public:
    explicit MockServer(std::function<void(httplib::Server&)> routes) {
        routes(server_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
};

inline CliResult cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    CliResult r;
    r.code = stindex::run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

/// Runs the built binary through the shell, for environment-sensitive checks.
inline int run_binary(const std::string& args_and_redirects) {
    auto cmd = std::string(STINDEX_CLI_PATH) + " " + args_and_redirects;
    return std::system(cmd.c_str());
}

}  // namespace testing_support
