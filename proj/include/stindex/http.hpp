#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "stindex/error.hpp"

namespace stindex::http {

/// "scheme://host[:port]" plus the path that follows it.
struct UrlParts {
    std::string origin;
    std::string host;
    std::string path;
};

inline UrlParts split_url(std::string_view url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) throw FetchError("not an absolute URL: " + std::string(url));
    auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw FetchError("unsupported URL scheme: " + std::string(url));
    auto rest = url.substr(scheme_end + 3);
    auto slash = rest.find('/');
    auto authority = rest.substr(0, slash);
    if (authority.empty()) throw FetchError("URL has no host: " + std::string(url));
    UrlParts parts;
    parts.origin = std::string(url.substr(0, scheme_end + 3 + authority.size()));
    parts.host = std::string(authority.substr(0, authority.find(':')));
    parts.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    return parts;
}

/// Enforces a minimum interval between requests to the same host. The only
/// shared mutable state on the fetch path; safe to use from many threads.
class HostRateLimiter {
public:
    explicit HostRateLimiter(std::chrono::milliseconds min_interval = std::chrono::milliseconds(1000))
        : min_interval_(min_interval) {}

    void acquire(const std::string& host) {
        std::chrono::steady_clock::time_point slot;
        {
            std::lock_guard lock(mutex_);
            auto now = std::chrono::steady_clock::now();
            auto& next = next_slot_[host];
            slot = std::max(now, next);
            next = slot + min_interval_;
        }
        std::this_thread::sleep_until(slot);
    }

    std::chrono::milliseconds min_interval() const { return min_interval_; }

private:
    std::chrono::milliseconds min_interval_;
    std::mutex mutex_;
    std::map<std::string, std::chrono::steady_clock::time_point> next_slot_;
};

inline std::unique_ptr<httplib::Client> make_client(const UrlParts& url, std::chrono::seconds timeout) {
    auto client = std::make_unique<httplib::Client>(url.origin);
    client->set_connection_timeout(timeout);
    client->set_read_timeout(timeout);
    client->set_write_timeout(timeout);
    client->set_follow_location(true);
    return client;
}

}  // namespace stindex::http
