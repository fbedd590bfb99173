#pragma once

// Independent reference implementations, written without reusing library code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

namespace oracle {

/// Great-circle distance from the angle between unit vectors.
inline double great_circle_km(double lat1, double lon1, double lat2, double lon2) {
    const double r = 3.14159265358979323846 / 180.0;
    auto vec = [&](double lat, double lon) {
        return std::vector<double>{std::cos(lat * r) * std::cos(lon * r), std::cos(lat * r) * std::sin(lon * r),
                                   std::sin(lat * r)};
    };
    auto a = vec(lat1, lon1), b = vec(lat2, lon2);
    double cross[3] = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
    double sin_t = std::sqrt(cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]);
    double cos_t = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    return 6371.0 * std::atan2(sin_t, cos_t);
}

/// Proleptic Gregorian day count from 0000-03-01, by explicit month walk.
inline long days_from_civil(int y, int m, int d) {
    static const int month_len[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    auto leap = [](int yy) { return (yy % 4 == 0 && yy % 100 != 0) || yy % 400 == 0; };
    long n = 0;
    for (int yy = 1; yy < y; ++yy) n += leap(yy) ? 366 : 365;
    for (int mm = 1; mm < m; ++mm) n += month_len[mm - 1] + (mm == 2 && leap(y) ? 1 : 0);
    return n + d;
}

struct Point {
    double lat, lon;
    long day;
};

struct Dbscan {
    std::set<std::size_t> core;
    std::set<std::size_t> noise;
    /// Components of the core graph, each a sorted set of indices.
    std::set<std::set<std::size_t>> core_partition;
};

inline Dbscan dbscan(const std::vector<Point>& pts, double eps_km, double eps_days, std::size_t min_pts) {
    const auto n = pts.size();
    std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            adj[i][j] = std::fabs(static_cast<double>(pts[i].day - pts[j].day)) <= eps_days &&
                        great_circle_km(pts[i].lat, pts[i].lon, pts[j].lat, pts[j].lon) <= eps_km;
    Dbscan out;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t count = 0;
        for (std::size_t j = 0; j < n; ++j) count += adj[i][j];  // includes i itself
        if (count >= min_pts) out.core.insert(i);
    }
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
        return parent[x] == x ? x : parent[x] = find(parent[x]);
    };
    for (auto i : out.core)
        for (auto j : out.core)
            if (adj[i][j]) parent[find(i)] = find(j);
    std::map<std::size_t, std::set<std::size_t>> groups;
    for (auto i : out.core) groups[find(i)].insert(i);
    for (auto& [_, g] : groups) out.core_partition.insert(g);
    for (std::size_t i = 0; i < n; ++i) {
        if (out.core.count(i)) continue;
        bool reached = false;
        for (auto c : out.core) reached = reached || adj[i][c];
        if (!reached) out.noise.insert(i);
    }
    return out;
}

struct Prf {
    double precision, recall, f1;
};

/// Percentages rounded half-up to two places.
inline Prf prf(long tp, long fp, long fn) {
    auto r2 = [](double x) { return std::floor(x * 100.0 + 0.5 + 1e-9) / 100.0; };
    double p = tp + fp ? 100.0 * tp / (tp + fp) : 0.0;
    double r = tp + fn ? 100.0 * tp / (tp + fn) : 0.0;
    double f = tp ? 200.0 * tp / (2.0 * tp + fp + fn) : 0.0;
    return {r2(p), r2(r), r2(f)};
}

}  // namespace oracle
