#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace ssflab::io {

/// Shortest round-trip-safe rendering used in every CSV/JSON/config output.
inline std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string join(const std::vector<double>& v, const char* sep = ",")
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + num(v[i]);
    return s;
}

}  // namespace ssflab::io
