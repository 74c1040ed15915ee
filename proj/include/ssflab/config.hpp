#pragma once

// Plain-text experiment configuration: one `key = value` per line, `#`
// starts a comment. Unknown keys are rejected; absent keys take defaults.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"
#include "ssflab/model.hpp"

namespace ssflab {

struct ExperimentConfig {
    PeriodicPotential::Coeffs potential_coeffs{{-1, 1.0}, {1, 1.0}};
    std::string perturbation_family = "power_law";
    std::vector<double> perturbation_params{-0.2, 2.0};
    double perturbation_delta = 2.0;

    std::vector<double> h_grid{1.0 / 8, 1.0 / 12, 1.0 / 16, 1.0 / 24, 1.0 / 32, 1.0 / 48};
    double box_cells = 10.0;  ///< unit cells per unit of 1/h: M_cell = round(box_cells / h)
    int box_points_per_cell = 16;
    int solver_ceiling = 8192;

    int band_truncation = 32;
    int band_count = 8;
    int band_k_points = 512;
    double gap_tol = 1e-6;
    double slope_tol = 1e-6;

    double window_a = 1.85;
    double window_b = 2.05;

    double test_function_center = -1.0674627;
    double test_function_halfwidth = 0.0013;
    double test_function_amplitude = 1.0;

    double ssf_epsilon = 0.05;
    double ssf_h = 1.0 / 48;

    double effham_h = 1.0 / 64;
    int effham_max_modes = 4096;

    std::vector<double> limabs_h_grid{1.0 / 2, 1.0 / 3, 1.0 / 4};
    double limabs_box_growth = 40.0;
    double limabs_eta0 = 0.05;
    double limabs_alpha = 1.0;
    int limabs_power = 1;
    int limabs_mu_points = 5;

    std::string output_dir = "out";

    bool operator==(const ExperimentConfig&) const = default;

    PeriodicPotential potential() const { return PeriodicPotential(potential_coeffs); }

    Perturbation perturbation() const
    {
        const auto& p = perturbation_params;
        auto need = [&](std::size_t n) {
            if (p.size() != n)
                throw ValidationError("perturbation.params for " + perturbation_family + " needs " +
                                      std::to_string(n) + " values");
        };
        if (perturbation_family == "zero") return Perturbation::zero();
        if (perturbation_family == "power_law") {
            need(2);
            return Perturbation::power_law(p[0], p[1], perturbation_delta);
        }
        if (perturbation_family == "gaussian") {
            need(2);
            return Perturbation::gaussian(p[0], p[1], perturbation_delta);
        }
        if (perturbation_family == "bump") {
            need(2);
            return Perturbation::bump(p[0], p[1], perturbation_delta);
        }
        throw ValidationError("unknown perturbation.family '" + perturbation_family + "'");
    }

    TestFunction test_function() const
    {
        return TestFunction(test_function_center, test_function_halfwidth, test_function_amplitude);
    }

    /// Number of unit cells of the periodic box at semiclassical parameter h.
    int cells_for(double h) const { return static_cast<int>(std::lround(box_cells / h)); }
};

namespace detail {

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        auto t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

// Accepts plain decimals and fractions such as "1/48".
inline double parse_number(const std::string& key, const std::string& text)
{
    auto parse_plain = [&](std::string_view t) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty())
            throw ValidationError("cannot parse number '" + text + "' for key " + key);
        return v;
    };
    const auto slash = text.find('/');
    if (slash == std::string::npos) return parse_plain(text);
    const double den = parse_plain(std::string_view(text).substr(slash + 1));
    if (den == 0.0) throw ValidationError("zero denominator in '" + text + "' for key " + key);
    return parse_plain(std::string_view(text).substr(0, slash)) / den;
}

inline int parse_int(const std::string& key, const std::string& text)
{
    int v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw ValidationError("cannot parse integer '" + text + "' for key " + key);
    return v;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& text)
{
    std::vector<double> out;
    for (const auto& item : split(text, ',')) out.push_back(parse_number(key, item));
    return out;
}

inline std::string fmt(double v) { return io::num(v); }
inline std::string fmt_list(const std::vector<double>& v) { return io::join(v); }

}  // namespace detail

/// Validates a configuration; throws ValidationError naming the first problem.
inline void validate(const ExperimentConfig& c)
{
    if (!(c.perturbation_delta > 1.0)) throw ValidationError("delta must exceed dimension n=1");
    PeriodicPotential pot(c.potential_coeffs);
    auto phi = c.perturbation();
    phi.certificate().validate();
    for (double h : c.h_grid)
        if (!(h > 0.0)) throw ValidationError("h.grid entries must be positive");
    for (double h : c.limabs_h_grid)
        if (!(h > 0.0)) throw ValidationError("limabs.h_grid entries must be positive");
    if (!(c.box_cells > 0.0)) throw ValidationError("box.cells must be positive");
    if (c.box_points_per_cell < 16) throw ValidationError("box.points_per_cell must be at least 16");
    if (c.band_truncation < pot.bandwidth()) throw ValidationError("truncation below potential bandwidth");
    if (c.band_count < 1 || c.band_count > 2 * c.band_truncation + 1)
        throw ValidationError("band.count must lie in [1, 2*band.truncation+1]");
    if (c.band_k_points < 16 || c.band_k_points % 2 != 0)
        throw ValidationError("band.k_points must be even and at least 16");
    if (!(c.window_a < c.window_b)) throw ValidationError("window.a must be below window.b");
    if (!(c.test_function_halfwidth > 0.0)) throw ValidationError("degenerate support");
    if (!(c.ssf_epsilon > 0.0)) throw ValidationError("ssf.epsilon must be positive");
    if (!(c.gap_tol > 0.0 && c.slope_tol > 0.0)) throw ValidationError("tolerances must be positive");
    if (c.limabs_power < 1 || c.limabs_power > 2) throw ValidationError("limabs.l must be 1 or 2");
    if (!(c.limabs_alpha > c.limabs_power - 0.5)) throw ValidationError("limabs.alpha must exceed l - 1/2");
    if (!(c.limabs_eta0 > 0.0)) throw ValidationError("limabs.eta0 must be positive");
    if (c.limabs_mu_points < 1) throw ValidationError("limabs.mu_points must be positive");
    if (c.effham_max_modes < 3) throw ValidationError("effham.max_modes too small");
    if (c.solver_ceiling < 16) throw ValidationError("solver.ceiling too small");
}

inline ExperimentConfig load_config(std::string_view text)
{
    ExperimentConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ValidationError("line " + std::to_string(lineno) + ": expected key = value");
        const auto key = detail::trim(std::string_view(t).substr(0, eq));
        const auto val = detail::trim(std::string_view(t).substr(eq + 1));
        if (seen.count(key)) throw ValidationError("duplicate key " + key);
        seen[key] = lineno;
        using detail::parse_int;
        using detail::parse_list;
        using detail::parse_number;
        if (key == "potential.coeffs") {
            c.potential_coeffs.clear();
            for (const auto& item : detail::split(val, ',')) {
                auto parts = detail::split(item, ':');
                if (parts.size() != 3) throw ValidationError("potential.coeffs entries must read m:re:im");
                c.potential_coeffs[parse_int(key, parts[0])] = {parse_number(key, parts[1]),
                                                                parse_number(key, parts[2])};
            }
        } else if (key == "perturbation.family") {
            c.perturbation_family = val;
        } else if (key == "perturbation.params") {
            c.perturbation_params = parse_list(key, val);
        } else if (key == "perturbation.delta") {
            c.perturbation_delta = parse_number(key, val);
        } else if (key == "h.grid") {
            c.h_grid = parse_list(key, val);
        } else if (key == "box.cells") {
            c.box_cells = parse_number(key, val);
        } else if (key == "box.points_per_cell") {
            c.box_points_per_cell = parse_int(key, val);
        } else if (key == "solver.ceiling") {
            c.solver_ceiling = parse_int(key, val);
        } else if (key == "band.truncation") {
            c.band_truncation = parse_int(key, val);
        } else if (key == "band.count") {
            c.band_count = parse_int(key, val);
        } else if (key == "band.k_points") {
            c.band_k_points = parse_int(key, val);
        } else if (key == "band.gap_tol") {
            c.gap_tol = parse_number(key, val);
        } else if (key == "band.slope_tol") {
            c.slope_tol = parse_number(key, val);
        } else if (key == "window.a") {
            c.window_a = parse_number(key, val);
        } else if (key == "window.b") {
            c.window_b = parse_number(key, val);
        } else if (key == "test_function.center") {
            c.test_function_center = parse_number(key, val);
        } else if (key == "test_function.halfwidth") {
            c.test_function_halfwidth = parse_number(key, val);
        } else if (key == "test_function.amplitude") {
            c.test_function_amplitude = parse_number(key, val);
        } else if (key == "ssf.epsilon") {
            c.ssf_epsilon = parse_number(key, val);
        } else if (key == "ssf.h") {
            c.ssf_h = parse_number(key, val);
        } else if (key == "effham.h") {
            c.effham_h = parse_number(key, val);
        } else if (key == "effham.max_modes") {
            c.effham_max_modes = parse_int(key, val);
        } else if (key == "limabs.h_grid") {
            c.limabs_h_grid = parse_list(key, val);
        } else if (key == "limabs.box_growth") {
            c.limabs_box_growth = parse_number(key, val);
        } else if (key == "limabs.eta0") {
            c.limabs_eta0 = parse_number(key, val);
        } else if (key == "limabs.alpha") {
            c.limabs_alpha = parse_number(key, val);
        } else if (key == "limabs.l") {
            c.limabs_power = parse_int(key, val);
        } else if (key == "limabs.mu_points") {
            c.limabs_mu_points = parse_int(key, val);
        } else if (key == "output.dir") {
            c.output_dir = val;
        } else {
            throw ValidationError("unknown key " + key);
        }
    }
    validate(c);
    return c;
}

inline std::string serialize_config(const ExperimentConfig& c)
{
    using detail::fmt;
    using detail::fmt_list;
    std::ostringstream out;
    out << "potential.coeffs = ";
    bool first = true;
    for (const auto& [m, v] : c.potential_coeffs) {
        out << (first ? "" : ",") << m << ':' << fmt(v.real()) << ':' << fmt(v.imag());
        first = false;
    }
    out << '\n';
    out << "perturbation.family = " << c.perturbation_family << '\n';
    out << "perturbation.params = " << fmt_list(c.perturbation_params) << '\n';
    out << "perturbation.delta = " << fmt(c.perturbation_delta) << '\n';
    out << "h.grid = " << fmt_list(c.h_grid) << '\n';
    out << "box.cells = " << fmt(c.box_cells) << '\n';
    out << "box.points_per_cell = " << c.box_points_per_cell << '\n';
    out << "solver.ceiling = " << c.solver_ceiling << '\n';
    out << "band.truncation = " << c.band_truncation << '\n';
    out << "band.count = " << c.band_count << '\n';
    out << "band.k_points = " << c.band_k_points << '\n';
    out << "band.gap_tol = " << fmt(c.gap_tol) << '\n';
    out << "band.slope_tol = " << fmt(c.slope_tol) << '\n';
    out << "window.a = " << fmt(c.window_a) << '\n';
    out << "window.b = " << fmt(c.window_b) << '\n';
    out << "test_function.center = " << fmt(c.test_function_center) << '\n';
    out << "test_function.halfwidth = " << fmt(c.test_function_halfwidth) << '\n';
    out << "test_function.amplitude = " << fmt(c.test_function_amplitude) << '\n';
    out << "ssf.epsilon = " << fmt(c.ssf_epsilon) << '\n';
    out << "ssf.h = " << fmt(c.ssf_h) << '\n';
    out << "effham.h = " << fmt(c.effham_h) << '\n';
    out << "effham.max_modes = " << c.effham_max_modes << '\n';
    out << "limabs.h_grid = " << fmt_list(c.limabs_h_grid) << '\n';
    out << "limabs.box_growth = " << fmt(c.limabs_box_growth) << '\n';
    out << "limabs.eta0 = " << fmt(c.limabs_eta0) << '\n';
    out << "limabs.alpha = " << fmt(c.limabs_alpha) << '\n';
    out << "limabs.l = " << c.limabs_power << '\n';
    out << "limabs.mu_points = " << c.limabs_mu_points << '\n';
    out << "output.dir = " << c.output_dir << '\n';
    return out.str();
}

/// FNV-1a hash of the serialized configuration, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : serialize_config(c)) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace ssflab
