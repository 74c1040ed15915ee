#pragma once

// Experiment orchestration: h-sweeps of the trace observables, least-squares
// fits of h T(h) = c0 + c1 h + c2 h^2, the three-way consistency triangle and
// report emission.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssflab/bloch.hpp"
#include "ssflab/boxdisc.hpp"
#include "ssflab/coeffs.hpp"
#include "ssflab/config.hpp"
#include "ssflab/dos.hpp"
#include "ssflab/effham.hpp"
#include "ssflab/errors.hpp"
#include "ssflab/io.hpp"
#include "ssflab/limabs.hpp"
#include "ssflab/model.hpp"
#include "ssflab/parallel.hpp"

namespace ssflab {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json num_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

}  // namespace detail

// ---------------------------------------------------------------- fitting

struct FitResult {
    int order = 0;
    std::vector<double> h, y;          ///< y = h T(h)
    std::vector<double> coeffs;        ///< c0, c1, ..., c_order
    std::vector<double> residuals;     ///< y - model
    double residual_norm = 0.0;
    double condition = 0.0;            ///< 2-norm condition number of the design matrix
    std::vector<double> loo_c0;        ///< c0 with point i left out
    double loo_spread = 0.0;           ///< max |loo_c0 - c0|
    double loo_rel_spread = 0.0;       ///< loo_spread / |c0|
    bool unstable = false;             ///< loo_rel_spread above 2%

    double c0() const { return coeffs.empty() ? 0.0 : coeffs[0]; }

    /// Model value T(h); refuses h outside the fitted hull.
    double predict(double hh) const
    {
        const auto [lo, hi] = std::minmax_element(h.begin(), h.end());
        if (hh < *lo || hh > *hi) throw ValidationError("fit refuses extrapolation outside the h-grid hull");
        double s = 0.0, p = 1.0;
        for (double c : coeffs) s += c * p, p *= hh;
        return s / hh;
    }

    Json to_json() const
    {
        Json j;
        j["order"] = order;
        j["coefficients"] = coeffs;
        j["residuals"] = residuals;
        j["residual_norm"] = residual_norm;
        j["condition"] = condition;
        j["loo_c0"] = loo_c0;
        j["loo_spread"] = loo_spread;
        j["loo_rel_spread"] = detail::num_or_null(loo_rel_spread);
        j["unstable"] = unstable;
        return j;
    }
};

namespace detail {

inline std::vector<double> least_squares(const std::vector<double>& h, const std::vector<double>& y, int order,
                                         double* condition = nullptr)
{
    const auto n = static_cast<Eigen::Index>(h.size());
    Eigen::MatrixXd X(n, order + 1);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double p = 1.0;
        for (int c = 0; c <= order; ++c) X(i, c) = p, p *= h[static_cast<std::size_t>(i)];
        b(i) = y[static_cast<std::size_t>(i)];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double cond = s(s.size() - 1) > 0.0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
    if (condition) *condition = cond;
    if (!(cond <= 1e8)) throw ValidationError("ill-conditioned fit, widen h-grid");
    const Eigen::VectorXd c = svd.solve(b);
    return {c.data(), c.data() + c.size()};
}

}  // namespace detail

/// Least squares for h T(h) = c0 + c1 h + ... + c_order h^order.
inline FitResult fit_asymptotics(const std::vector<double>& h, const std::vector<double>& T, int order)
{
    if (order < 0 || order > 2) throw ValidationError("fit order must be 0, 1 or 2");
    if (h.size() != T.size()) throw ValidationError("fit data length mismatch");
    if (static_cast<int>(h.size()) < order + 2) throw ValidationError("insufficient points for fit");
    FitResult r;
    r.order = order;
    r.h = h;
    for (std::size_t i = 0; i < h.size(); ++i) r.y.push_back(h[i] * T[i]);
    r.coeffs = detail::least_squares(r.h, r.y, order, &r.condition);
    double ss = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        double m = 0.0, p = 1.0;
        for (double c : r.coeffs) m += c * p, p *= h[i];
        r.residuals.push_back(r.y[i] - m);
        ss += r.residuals.back() * r.residuals.back();
    }
    r.residual_norm = std::sqrt(ss);
    for (std::size_t i = 0; i < h.size(); ++i) {
        std::vector<double> hh, yy;
        for (std::size_t j = 0; j < h.size(); ++j)
            if (j != i) hh.push_back(h[j]), yy.push_back(r.y[j]);
        r.loo_c0.push_back(detail::least_squares(hh, yy, order)[0]);
        r.loo_spread = std::max(r.loo_spread, std::abs(r.loo_c0.back() - r.c0()));
    }
    r.loo_rel_spread = r.c0() != 0.0 ? r.loo_spread / std::abs(r.c0())
                                     : (r.loo_spread > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    r.unstable = r.loo_rel_spread > 0.02;
    return r;
}

// ---------------------------------------------------------------- context

/// Shared state of one experiment: the configuration, the band table and a
/// memo of box spectra keyed by (h, cells, points per cell, perturbed).
class ExperimentContext {
public:
    ExperimentContext(ExperimentConfig cfg, unsigned threads = 1, std::string cache_dir = {})
        : cfg_(std::move(cfg)), threads_(std::max(1u, threads)), cache_dir_(std::move(cache_dir))
    {
        validate(cfg_);
        V_ = cfg_.potential();
        phi_ = cfg_.perturbation();
        f_ = cfg_.test_function();
        hash_ = config_hash(cfg_);
    }

    const ExperimentConfig& config() const { return cfg_; }
    const PeriodicPotential& potential() const { return V_; }
    const Perturbation& perturbation() const { return phi_; }
    const TestFunction& test_function() const { return f_; }
    const std::string& hash() const { return hash_; }
    unsigned threads() const { return threads_; }

    const BandStructure& bands()
    {
        if (!bands_) {
            auto bs = compute_bands(V_, cfg_.band_k_points, cfg_.band_truncation, cfg_.band_count, threads_);
            bs.gap_tol = cfg_.gap_tol;
            bs.slope_tol = cfg_.slope_tol;
            bands_ = std::move(bs);
        }
        return *bands_;
    }

    BoxOptions box_options() const
    {
        BoxOptions o;
        o.ceiling = static_cast<std::size_t>(cfg_.solver_ceiling);
        return o;
    }

    BoxOperator box(double h, bool perturbed, int cells = 0, int pts = 0) const
    {
        return assemble_box_operator(V_, perturbed ? phi_ : Perturbation::zero(), h,
                                     cells > 0 ? cells : cfg_.cells_for(h), pts > 0 ? pts : cfg_.box_points_per_cell,
                                     box_options());
    }

    /// Values-only spectrum, memoized and optionally cached on disk.
    const BoxSpectrum& spectrum(const BoxOperator& op)
    {
        const Key key{op.h, op.cells, op.points_per_cell, !op.unperturbed()};
        if (auto it = memo_.find(key); it != memo_.end()) return it->second;
        BoxSpectrum s;
        const std::string path = cache_path(key);
        if (!path.empty())
            if (auto v = load_spectrum(path, op.n)) s.values = std::move(*v);
        if (s.values.empty()) {
            s = box_spectrum(op);
            if (!path.empty()) save_spectrum(path, s.values);
        }
        return memo_.emplace(key, std::move(s)).first->second;
    }

    /// Computes missing spectra for the given operators, in parallel across operators.
    void prefetch(const std::vector<BoxOperator>& ops)
    {
        std::vector<const BoxOperator*> todo;
        for (const auto& op : ops)
            if (op.n <= op.ceiling && !memo_.count(Key{op.h, op.cells, op.points_per_cell, !op.unperturbed()}))
                todo.push_back(&op);
        std::vector<BoxSpectrum> out(todo.size());
        std::vector<char> loaded(todo.size(), 0);
        for (std::size_t i = 0; i < todo.size(); ++i) {
            const auto path = cache_path(Key{todo[i]->h, todo[i]->cells, todo[i]->points_per_cell, !todo[i]->unperturbed()});
            if (!path.empty())
                if (auto v = load_spectrum(path, todo[i]->n)) out[i].values = std::move(*v), loaded[i] = 1;
        }
        parallel_for(todo.size(), threads_, [&](std::size_t i) {
            if (!loaded[i]) out[i] = box_spectrum(*todo[i]);
        });
        for (std::size_t i = 0; i < todo.size(); ++i) {
            const Key key{todo[i]->h, todo[i]->cells, todo[i]->points_per_cell, !todo[i]->unperturbed()};
            const auto path = cache_path(key);
            if (!path.empty() && !loaded[i]) save_spectrum(path, out[i].values);
            memo_.emplace(key, std::move(out[i]));
        }
    }

    /// Trace-level bound of the certificate tail beyond |hx| = hL:
    /// h^{-1} (bands meeting supp f) sup|f'| / (2 pi) C0 int_{|r| > hL} (1 + |r|)^{-delta} dr.
    template <EnergyFunction F>
    double trace_tail(const BoxOperator& op, const F& f)
    {
        if (phi_.is_zero()) return 0.0;
        const auto& bs = bands();
        const auto [plo, phi_hi] = phi_.range();
        const auto [a, b] = f.support();
        int used = 0;
        for (int p = 0; p < bs.bands; ++p)
            if (bs.band_max(p) + std::max(phi_hi, 0.0) >= a && bs.band_min(p) + std::min(plo, 0.0) <= b) ++used;
        const auto& c = phi_.certificate();
        return used * f.max_abs_derivative() / kTwoPi * c.c0 * c.tail_integral(op.h * op.half_length) / op.h;
    }

private:
    struct Key {
        double h;
        int cells, pts;
        bool perturbed;
        bool operator<(const Key& o) const
        {
            return std::tie(h, cells, pts, perturbed) < std::tie(o.h, o.cells, o.pts, o.perturbed);
        }
    };

    std::string cache_path(const Key& k) const
    {
        if (cache_dir_.empty()) return {};
        std::filesystem::create_directories(cache_dir_);
        std::ostringstream os;
        os << cache_dir_ << '/' << hash_ << '-' << io::num(k.h) << '-' << k.cells << '-' << k.pts << '-'
           << (k.perturbed ? "P" : "0") << ".bin";
        return os.str();
    }

    ExperimentConfig cfg_;
    unsigned threads_;
    std::string cache_dir_;
    PeriodicPotential V_;
    Perturbation phi_;
    TestFunction f_;
    std::string hash_;
    std::optional<BandStructure> bands_;
    std::map<Key, BoxSpectrum> memo_;
};

// ---------------------------------------------------------------- sweeps

enum class Observable { trace_diff, smoothed_ssf, effective_trace_diff, resolvent_norm };

inline std::string to_string(Observable o)
{
    switch (o) {
    case Observable::trace_diff: return "trace_diff";
    case Observable::smoothed_ssf: return "smoothed_ssf";
    case Observable::effective_trace_diff: return "effective_trace_diff";
    case Observable::resolvent_norm: return "resolvent_norm";
    }
    return "?";
}

inline Observable parse_observable(const std::string& s)
{
    for (auto o : {Observable::trace_diff, Observable::smoothed_ssf, Observable::effective_trace_diff,
                   Observable::resolvent_norm})
        if (to_string(o) == s) return o;
    throw ValidationError("unknown observable '" + s + "'");
}

struct SweepPoint {
    double h = 0.0;
    std::size_t n = 0;                 ///< grid size or mode count
    double value = std::numeric_limits<double>::quiet_NaN();
    bool included = true;
    std::string flag;                  ///< reason for exclusion or a recorded note
    double boundary_tail = 0.0;        ///< trace-level certificate tail (trace observables)
    double l_change = std::numeric_limits<double>::quiet_NaN();       ///< |value(2L) - value(L)|
    double cutoff_change = std::numeric_limits<double>::quiet_NaN();  ///< |value(2 pts) - value(pts)|
    bool cutoff_flag = false;
};

struct Reference {
    std::string name;
    double value = std::numeric_limits<double>::quiet_NaN();
    double error = std::numeric_limits<double>::quiet_NaN();
};

struct HSweepReport {
    std::string config_hash;
    Observable observable = Observable::trace_diff;
    double mu = std::numeric_limits<double>::quiet_NaN();  ///< energy for pointwise observables
    std::vector<SweepPoint> points;
    std::optional<FitResult> fit;
    std::string fit_error;
    Reference reference;

    std::vector<double> included_h() const
    {
        std::vector<double> v;
        for (const auto& p : points)
            if (p.included) v.push_back(p.h);
        return v;
    }

    Json to_json() const
    {
        Json j;
        j["config_hash"] = config_hash;
        j["observable"] = to_string(observable);
        if (std::isfinite(mu)) j["mu"] = mu;
        Json pts = Json::array();
        for (const auto& p : points) {
            Json q;
            q["h"] = p.h;
            q["n"] = p.n;
            q["value"] = detail::num_or_null(p.value);
            q["h_value"] = detail::num_or_null(p.h * p.value);
            q["included"] = p.included;
            q["flag"] = p.flag;
            q["boundary_tail"] = p.boundary_tail;
            q["l_change"] = detail::num_or_null(p.l_change);
            q["cutoff_change"] = detail::num_or_null(p.cutoff_change);
            q["cutoff_flag"] = p.cutoff_flag;
            pts.push_back(q);
        }
        j["points"] = pts;
        j["fit"] = fit ? fit->to_json() : Json(nullptr);
        if (!fit_error.empty()) j["fit_error"] = fit_error;
        if (!reference.name.empty()) {
            j["reference"] = {{"name", reference.name},
                              {"value", detail::num_or_null(reference.value)},
                              {"error", detail::num_or_null(reference.error)}};
            if (fit && std::isfinite(reference.value) && reference.value != 0.0)
                j["c0_rel_err"] = std::abs(fit->c0() - reference.value) / std::abs(reference.value);
        }
        return j;
    }
};

/// CSV with columns h, n, value, h_value, included, flag, boundary_tail, l_change, cutoff_change.
inline void write_sweep_csv(std::ostream& os, const HSweepReport& r)
{
    os << "h,n,value,h_value,included,flag,boundary_tail,l_change,cutoff_change\n";
    for (const auto& p : r.points)
        os << io::num(p.h) << ',' << p.n << ',' << io::num(p.value) << ',' << io::num(p.h * p.value) << ','
           << (p.included ? 1 : 0) << ',' << p.flag << ',' << io::num(p.boundary_tail) << ',' << io::num(p.l_change)
           << ',' << io::num(p.cutoff_change) << '\n';
}

struct SweepOptions {
    int fit_order = 2;
    int stability_points = 1;          ///< coarsest points that get L- and cutoff-doubling checks
    double cutoff_tol = 1e-6;
    double mu = std::numeric_limits<double>::quiet_NaN();  ///< smoothed_ssf energy; window midpoint if NaN
    std::vector<double> h_grid;        ///< overrides the configured grid when nonempty
    std::string raw_csv;               ///< raw table path, written before fitting
};

namespace detail {

inline void require_h_grid(const std::vector<double>& hs)
{
    if (hs.size() < 4) throw ValidationError("insufficient h-grid (need at least 4 points)");
    const auto [lo, hi] = std::minmax_element(hs.begin(), hs.end());
    if (!(*lo > 0.0) || *hi / *lo < 4.0 - 1e-12) throw ValidationError("insufficient h-grid (must span a factor 4)");
}

// Runs fn, turning a guard exception into an excluded point.
template <class Fn>
void guarded(SweepPoint& p, Fn&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        p.included = false;
        p.flag = e.what();
    }
}

}  // namespace detail

inline HSweepReport h_sweep(ExperimentContext& ctx, Observable obs, const SweepOptions& opt = {})
{
    const auto& cfg = ctx.config();
    std::vector<double> hs = !opt.h_grid.empty()                ? opt.h_grid
                             : obs == Observable::resolvent_norm ? cfg.limabs_h_grid
                                                                 : cfg.h_grid;
    detail::require_h_grid(hs);
    std::sort(hs.begin(), hs.end(), std::greater<>());
    HSweepReport rep;
    rep.config_hash = ctx.hash();
    rep.observable = obs;
    const auto& f = ctx.test_function();
    const auto& phi = ctx.perturbation();
    const double mu = std::isfinite(opt.mu) ? opt.mu : 0.5 * (cfg.window_a + cfg.window_b);

    if (obs == Observable::trace_diff || obs == Observable::smoothed_ssf) {
        std::vector<BoxOperator> ops;
        for (double h : hs) {
            try {
                ops.push_back(ctx.box(h, true));
                ops.push_back(ctx.box(h, false));
            } catch (const Error&) {
                // reported per point below
            }
        }
        ctx.prefetch(ops);
    }
    if (obs == Observable::smoothed_ssf) rep.mu = mu;

    ResolventStudyOptions ro;
    std::optional<ResolventProbeResult> study;
    std::optional<Error> study_error;
    if (obs == Observable::resolvent_norm) {
        ro.a = cfg.window_a;
        ro.b = cfg.window_b;
        ro.h_grid = hs;
        ro.box_growth = cfg.limabs_box_growth;
        ro.points_per_cell = cfg.box_points_per_cell;
        ro.eta0 = cfg.limabs_eta0;
        ro.alpha = cfg.limabs_alpha;
        ro.l = cfg.limabs_power;
        ro.mu_points = cfg.limabs_mu_points;
        ro.ceiling = static_cast<std::size_t>(cfg.solver_ceiling);
        ro.threads = ctx.threads();
        try {
            study = resolvent_scaling_study(ctx.bands(), phi, ro);
        } catch (const CertificationError&) {
            throw;
        } catch (const Error& e) {
            study_error = e;
        }
    }

    std::size_t index = 0;
    for (double h : hs) {
        SweepPoint p;
        p.h = h;
        const bool check_stability = static_cast<int>(index++) < opt.stability_points;
        switch (obs) {
        case Observable::trace_diff:
            detail::guarded(p, [&] {
                const auto opH = ctx.box(h, true), op0 = ctx.box(h, false);
                p.n = opH.n;
                p.value = trace_diff(opH, ctx.spectrum(opH), op0, ctx.spectrum(op0), f);
                p.boundary_tail = ctx.trace_tail(opH, f);
                p.cutoff_flag = cutoff_flag(opH, f);
                if (p.cutoff_flag) throw NumericalGuardError("test function support above resolved energy");
                if (check_stability && 2 * opH.n <= static_cast<std::size_t>(cfg.solver_ceiling)) {
                    const auto dH = ctx.box(h, true, 2 * opH.cells), d0 = ctx.box(h, false, 2 * opH.cells);
                    p.l_change = std::abs(trace_diff(dH, box_spectrum(dH), d0, box_spectrum(d0), f) - p.value);
                    if (p.l_change > 2.0 * p.boundary_tail) throw NumericalGuardError("L-stability failed");
                    const auto cH = ctx.box(h, true, 0, 2 * opH.points_per_cell);
                    const auto c0 = ctx.box(h, false, 0, 2 * opH.points_per_cell);
                    p.cutoff_change = std::abs(trace_diff(cH, box_spectrum(cH), c0, box_spectrum(c0), f) - p.value);
                    if (p.cutoff_change > opt.cutoff_tol) throw NumericalGuardError("cutoff-stability failed");
                }
            });
            break;
        case Observable::smoothed_ssf:
            detail::guarded(p, [&] {
                const auto opH = ctx.box(h, true), op0 = ctx.box(h, false);
                p.n = opH.n;
                const auto s = smoothed_ssf_derivative(opH, ctx.spectrum(opH), op0, ctx.spectrum(op0), mu,
                                                       cfg.ssf_epsilon);
                p.value = s.value;
                if (!s.resolved) throw NumericalGuardError(s.warning);
            });
            break;
        case Observable::effective_trace_diff:
            detail::guarded(p, [&] {
                EffectiveOptions eo;
                eo.max_modes = cfg.effham_max_modes;
                const auto eff = effective_operator(ctx.bands(), phi, h, eo);
                p.n = eff.size();
                p.value = effective_trace_diff(eff, f, phi);
                // recorded, not excluded: the certificate tail is often out of reach under the mode cap
                if (!eff.tail_resolved) p.flag = "phi tail at J above 1e-8: " + io::num(eff.phi_tail);
            });
            break;
        case Observable::resolvent_norm:
            detail::guarded(p, [&] {
                if (!study) throw *study_error;
                const auto it = std::find(study->h_grid.begin(), study->h_grid.end(), h);
                const auto i = static_cast<std::size_t>(it - study->h_grid.begin());
                for (const auto& row : study->rows)
                    if (row.h == h) p.n = row.n;
                p.value = study->norm_at(h, study->etas.back());
                if (study->plateau_per_h[i] >= ro.plateau_limit) throw NumericalGuardError("eta-limit not resolved");
            });
            break;
        }
        rep.points.push_back(p);
    }
    if (!opt.raw_csv.empty()) {
        std::ofstream os(opt.raw_csv);
        write_sweep_csv(os, rep);
    }
    std::vector<double> fh, fv;
    for (const auto& p : rep.points)
        if (p.included) fh.push_back(p.h), fv.push_back(p.value);
    try {
        if (fh.size() < 4) throw NumericalGuardError("fewer than 4 points survive the guards");
        rep.fit = fit_asymptotics(fh, fv, opt.fit_order);
    } catch (const Error& e) {
        rep.fit_error = e.what();
    }
    return rep;
}

// ---------------------------------------------------------------- pipeline

inline ExperimentConfig load_config_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_config(ss.str());
}

/// CSV with columns mu, band, k, slope, curvature, gap, simple, critical (band is 1-based).
inline void write_fermi_csv(std::ostream& os, const BandStructure& bs, const std::vector<double>& mus)
{
    os << "mu,band,k,slope,curvature,gap,simple,critical\n";
    for (double mu : mus)
        for (const auto& fp : fermi_set(bs, mu))
            os << io::num(mu) << ',' << fp.band + 1 << ',' << io::num(fp.k) << ',' << io::num(fp.slope) << ','
               << io::num(fp.curvature) << ',' << io::num(fp.gap) << ',' << (fp.simple ? 1 : 0) << ','
               << (fp.critical ? 1 : 0) << '\n';
}

inline Json coefficient_json(const CoefficientResult& c) { return Json::parse(c.to_json()); }

inline Json certificate_json(const NoncriticalCertificate& c)
{
    return {{"simple", c.simple},
            {"noncritical", c.noncritical},
            {"min_gap", detail::num_or_null(c.min_gap)},
            {"min_slope", detail::num_or_null(c.min_slope)},
            {"gap_band", c.gap_band + 1},
            {"slope_band", c.slope_band + 1},
            {"slope_mu", c.slope_mu},
            {"fermi_points", c.fermi_points}};
}

inline Json nontrapping_json(const NontrappingReport& r)
{
    return {{"a", r.a},
            {"b", r.b},
            {"margin", r.margin},
            {"argmin_k", r.argmin_k},
            {"argmin_r", r.argmin_r},
            {"argmin_band", r.argmin_band},
            {"margin_variant", r.margin_variant},
            {"argmin_variant_k", r.argmin_variant_k},
            {"argmin_variant_r", r.argmin_variant_r},
            {"tolerance", r.tolerance},
            {"constrained_points", r.constrained_points},
            {"certified", r.certified()},
            {"certified_variant", r.certified_variant()}};
}

inline Json resolvent_json(const ResolventProbeResult& r)
{
    return {{"label", r.label},
            {"alpha", r.alpha},
            {"l", r.l},
            {"h_grid", r.h_grid},
            {"etas", r.etas},
            {"slope", detail::num_or_null(r.slope)},
            {"plateau", r.plateau},
            {"plateau_per_h", r.plateau_per_h},
            {"plateau_resolved", r.plateau_resolved},
            {"symmetry_defect", r.symmetry_defect},
            {"bound_respected", r.bound_respected},
            {"flag", r.flag},
            {"nontrapping", nontrapping_json(r.nontrapping)}};
}

/// theta_eps * f sampled on its support, as a test function.
template <EnergyFunction F>
TabulatedTestFunction mollified_test_function(const F& f, double eps, int samples = 801)
{
    const auto [fa, fb] = f.support();
    const auto theta = TestFunction::mollifier(0.0, eps);
    const double lo = fa - eps, hi = fb + eps;
    std::vector<double> y(static_cast<std::size_t>(samples));
    for (int i = 0; i < samples; ++i) {
        const double mu = lo + (hi - lo) * i / (samples - 1);
        if (i == 0 || i == samples - 1) continue;
        const double a = std::max(fa, mu - eps), b = std::min(fb, mu + eps);
        if (!(b > a)) continue;
        y[static_cast<std::size_t>(i)] =
            quad::integrate([&](double nu) { return f(nu) * theta(mu - nu); }, a, b, {1e-14, 1e-12, 400}).value;
    }
    return TabulatedTestFunction(lo, hi, std::move(y));
}

struct StageStatus {
    std::string name;
    std::string status = "ok";  ///< ok | failed | skipped
    std::string reason;
    int exit_code = 0;
    double seconds = 0.0;  ///< wall time; kept out of the emitted files so reruns stay byte-identical
};

struct RunOptions {
    bool duality = true;
    bool pointwise_to_weak = true;
    bool effham = true;
    bool limabs = true;
    int dos_points = 401;
    int p2w_nodes = 33;         ///< trapezoid nodes across supp f for the pointwise-to-weak check
    double triangle_rel_tol = 0.02;
};

struct RunReport {
    std::vector<StageStatus> stages;
    Json summary;
    std::string text;
    std::map<std::string, double> timings;  ///< wall-clock seconds of timed sub-steps

    int exit_code() const
    {
        for (const auto& s : stages)
            if (s.exit_code != 0) return s.exit_code;
        return 0;
    }
};

namespace detail {

inline void write_text(const std::string& path, const std::string& body)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write '" + path + "'");
    os << body;
}

inline std::string fixed(double v, int prec = 9)
{
    if (!std::isfinite(v)) return "n/a";
    std::ostringstream os;
    os.setf(std::ios::scientific);
    os.precision(prec);
    os << v;
    return os.str();
}

}  // namespace detail

/// Full pipeline: bands, DOS and Fermi tables, certification of (h2) and
/// (h3), coefficients, sweeps, triangle comparison, pointwise-to-weak check,
/// limiting absorption probe, summary.json and summary.txt. Each stage
/// persists its raw output before derived quantities; a failed stage marks
/// the stages depending on it as skipped with the reason.
inline RunReport run_experiment(ExperimentContext& ctx, const std::string& out_dir, const RunOptions& ro = {})
{
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto& cfg = ctx.config();
    const auto& phi = ctx.perturbation();
    const auto& f = ctx.test_function();
    const std::string dir = out_dir + "/";
    RunReport rep;
    Json& S = rep.summary;
    S["config_hash"] = ctx.hash();
    S["config"] = serialize_config(cfg);
    std::map<std::string, bool> ok;

    auto stage = [&](const std::string& name, const std::vector<std::string>& needs, auto&& body) {
        StageStatus st;
        st.name = name;
        for (const auto& n : needs)
            if (!ok[n]) {
                st.status = "skipped";
                st.reason = "requires " + n;
                break;
            }
        if (st.status == "ok") {
            const auto t0 = std::chrono::steady_clock::now();
            try {
                body();
            } catch (const Error& e) {
                st.status = "failed";
                st.reason = e.what();
                st.exit_code = e.exit_code();
            }
            st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        ok[name] = st.status == "ok";
        rep.stages.push_back(st);
    };

    const double mid = 0.5 * (cfg.window_a + cfg.window_b);
    CoefficientResult a0, a0_band1, a0_window;
    std::optional<CoefficientResult> gamma0_smoothed;
    std::optional<HSweepReport> trace_sweep, effham_sweep;
    CoeffOptions co;
    co.threads = ctx.threads();

    stage("bands", {}, [&] {
        const auto& bs = ctx.bands();
        std::ofstream os(dir + "bands.csv");
        write_bands_csv(os, bs);
        Json b = Json::array();
        for (int p = 0; p < bs.bands; ++p) {
            const auto [lo, hi] = band_extrema(bs, p);
            b.push_back({{"band", p + 1}, {"min", lo}, {"max", hi}});
        }
        S["bands"] = b;
    });

    stage("dos", {"bands"}, [&] {
        const auto& bs = ctx.bands();
        const double lo = bs.band_min(0) - 0.5, hi = bs.band_min(bs.bands - 1);
        std::vector<double> mus(static_cast<std::size_t>(ro.dos_points));
        for (int i = 0; i < ro.dos_points; ++i) mus[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (ro.dos_points - 1);
        const auto t = dos_table(bs, mus, ctx.threads());
        std::ofstream os(dir + "dos.csv");
        write_dos_csv(os, t);
    });

    stage("fermi", {"bands"}, [&] {
        std::ofstream os(dir + "fermi.csv");
        write_fermi_csv(os, ctx.bands(), {cfg.window_a, mid, cfg.window_b, f.center()});
    });

    stage("certify_h2", {"bands"}, [&] {
        const auto c = check_noncritical_simple(ctx.bands(), cfg.window_a, cfg.window_b);
        S["certification"]["h2"] = certificate_json(c);
        if (!c.pass())
            throw CertificationError(c.simple ? "(h2) fails on the window: critical Fermi point near mu=" +
                                                    io::num(c.slope_mu)
                                              : "(h2) fails on the window: band crossing");
    });

    stage("certify_h3", {"bands"}, [&] {
        const auto r = nontrapping_margin(ctx.bands(), phi, cfg.window_a, cfg.window_b, {}, ctx.threads());
        S["certification"]["h3"] = nontrapping_json(r);
        if (!r.certified()) throw CertificationError("(h3) non-trapping margin " + io::num(r.margin) + " not positive");
    });

    stage("coeffs", {"bands"}, [&] {
        const auto& bs = ctx.bands();
        a0 = a0_weak_coefficient(bs, phi, f, co);
        auto c1 = co;
        c1.only_band = 0;
        a0_band1 = a0_weak_coefficient(bs, phi, f, c1);
        auto cw = co;
        cw.x_max = kPi * cfg.box_cells;
        a0_window = a0_weak_coefficient(bs, phi, f, cw);
        Json& C = S["coefficients"];
        C["a0"] = coefficient_json(a0);
        C["a0_band1"] = coefficient_json(a0_band1);
        C["a0_box_window"] = coefficient_json(a0_window);
        C["box_window_x"] = kPi * cfg.box_cells;
    });

    stage("gamma0", {"coeffs", "certify_h2"}, [&] {
        const auto& bs = ctx.bands();
        S["coefficients"]["gamma0_mid"] = coefficient_json(gamma0_pointwise(bs, phi, mid, co));
        S["coefficients"]["gamma0_mid"]["mu"] = mid;
        gamma0_smoothed = gamma0_mollified(bs, phi, mid, cfg.ssf_epsilon, co);
        S["coefficients"]["gamma0_mollified_mid"] = coefficient_json(*gamma0_smoothed);
        S["coefficients"]["gamma0_mollified_mid"]["eps"] = cfg.ssf_epsilon;
    });

    if (ro.duality)
        stage("duality", {"coeffs"}, [&] {
            const auto g = gamma0_pairing(ctx.bands(), phi, f, co);
            const double defect = std::abs(a0.value + g.value);
            const double err = a0.total_error() + g.total_error();
            S["duality"] = {{"a0", a0.value},       {"pairing", g.value}, {"pairing_error", g.total_error()},
                            {"defect", defect},     {"combined_error", err}, {"pass", defect <= std::max(err, 1e-12)}};
            if (!(defect <= std::max(err, 1e-12)))
                throw NumericalGuardError("duality defect " + io::num(defect) + " above combined error " + io::num(err));
        });

    stage("trace_sweep", {"coeffs", "certify_h2"}, [&] {
        SweepOptions so;
        so.raw_csv = dir + "trace_sweep.csv";
        auto r = h_sweep(ctx, Observable::trace_diff, so);
        r.reference = {"a0", a0.value, a0.total_error()};
        S["sweeps"]["trace_diff"] = r.to_json();
        S["sweeps"]["trace_diff"]["a0_box_window"] = a0_window.value;
        trace_sweep = std::move(r);
        if (!trace_sweep->fit) throw NumericalGuardError(trace_sweep->fit_error);
    });

    stage("ssf", {"gamma0"}, [&] {
        SweepOptions so;
        so.raw_csv = dir + "ssf_sweep.csv";
        so.mu = mid;
        auto r = h_sweep(ctx, Observable::smoothed_ssf, so);
        const auto& ref = *gamma0_smoothed;
        r.reference = {"gamma0_mollified", ref.value, ref.total_error()};
        S["sweeps"]["smoothed_ssf"] = r.to_json();
        const auto opH = ctx.box(cfg.ssf_h, true), op0 = ctx.box(cfg.ssf_h, false);
        const auto s = smoothed_ssf_derivative(opH, ctx.spectrum(opH), op0, ctx.spectrum(op0), mid, cfg.ssf_epsilon);
        const double rel = std::abs(cfg.ssf_h * s.value - ref.value) / std::abs(ref.value);
        S["pointwise"] = {{"h", cfg.ssf_h},          {"mu", mid},           {"eps", cfg.ssf_epsilon},
                          {"h_value", cfg.ssf_h * s.value}, {"reference", ref.value}, {"reference_error", ref.total_error()},
                          {"rel_err", rel},          {"mean_spacing", s.mean_spacing}, {"resolved", s.resolved},
                          {"warning", s.warning}};
    });

    if (ro.effham)
        stage("effham", {"coeffs", "certify_h2"}, [&] {
            SweepOptions so;
            so.raw_csv = dir + "effham_sweep.csv";
            auto r = h_sweep(ctx, Observable::effective_trace_diff, so);
            r.reference = {"a0_band1", a0_band1.value, a0_band1.total_error()};
            S["sweeps"]["effective_trace_diff"] = r.to_json();
            EffectiveOptions eo;
            eo.max_modes = cfg.effham_max_modes;
            const auto t0 = std::chrono::steady_clock::now();
            const auto eff = effective_operator(ctx.bands(), phi, cfg.effham_h, eo);
            const auto rec = effham_record(eff, effective_trace_diff(eff, f, phi), a0_band1.value);
            S["effham"] = Json::parse(rec.to_json());
            S["effham"]["modes"] = eff.size();
            rep.timings["effham_record"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            effham_sweep = std::move(r);
            if (!effham_sweep->fit) throw NumericalGuardError(effham_sweep->fit_error);
        });

    stage("triangle", {"trace_sweep", "effham"}, [&] {
        const double tol = ro.triangle_rel_tol * std::abs(a0.value);
        struct Edge {
            const char* name;
            double lhs, rhs;
        };
        const Edge edges[] = {{"box_c0_vs_a0", trace_sweep->fit->c0(), a0.value},
                              {"effham_c0_vs_a0_band1", effham_sweep->fit->c0(), a0_band1.value},
                              {"a0_vs_a0_band1", a0.value, a0_band1.value}};
        Json T = Json::array();
        bool all = true;
        for (const auto& e : edges) {
            const double d = std::abs(e.lhs - e.rhs);
            T.push_back({{"pair", e.name}, {"lhs", e.lhs}, {"rhs", e.rhs}, {"diff", d}, {"pass", d <= tol}});
            all = all && d <= tol;
        }
        S["triangle"] = {{"tolerance", tol}, {"edges", T}, {"pass", all}};
        if (!all) throw NumericalGuardError("consistency triangle does not close");
    });

    if (ro.pointwise_to_weak)
        stage("pointwise_to_weak", {"trace_sweep", "certify_h2"}, [&] {
            const auto [fa, fb] = f.support();
            const int n = ro.p2w_nodes;
            std::ofstream os(dir + "pointwise_to_weak.csv");
            os << "mu,f,c0,loo_spread\n";
            double pairing = 0.0, spread = 0.0;
            const double step = (fb - fa) / (n - 1);
            for (int i = 1; i + 1 < n; ++i) {
                const double mu = fa + step * i;
                SweepOptions so;
                so.mu = mu;
                so.stability_points = 0;
                const auto r = h_sweep(ctx, Observable::smoothed_ssf, so);
                if (!r.fit) throw NumericalGuardError("pointwise sweep at mu=" + io::num(mu) + ": " + r.fit_error);
                os << io::num(mu) << ',' << io::num(f(mu)) << ',' << io::num(r.fit->c0()) << ','
                   << io::num(r.fit->loo_spread) << '\n';
                pairing += step * f(mu) * r.fit->c0();
                spread += step * std::abs(f(mu)) * r.fit->loo_spread;
            }
            const auto g = mollified_test_function(f, cfg.ssf_epsilon);
            const auto ref = a0_weak_coefficient(ctx.bands(), phi, g, co);
            const double defect = std::abs(pairing + ref.value);
            const double tol = ro.triangle_rel_tol * std::abs(ref.value) + spread + ref.total_error();
            S["pointwise_to_weak"] = {{"pairing", pairing},           {"a0_mollified_f", ref.value},
                                      {"a0_mollified_f_error", ref.total_error()}, {"loo_spread_bound", spread},
                                      {"defect", defect},              {"tolerance", tol},
                                      {"pass", defect <= tol}};
            if (!(defect <= tol)) throw NumericalGuardError("pointwise-to-weak defect " + io::num(defect));
        });

    if (ro.limabs)
        stage("limabs", {"certify_h3"}, [&] {
            ResolventStudyOptions lo;
            lo.a = cfg.window_a;
            lo.b = cfg.window_b;
            lo.h_grid = cfg.limabs_h_grid;
            lo.box_growth = cfg.limabs_box_growth;
            lo.points_per_cell = cfg.box_points_per_cell;
            lo.eta0 = cfg.limabs_eta0;
            lo.alpha = cfg.limabs_alpha;
            lo.l = cfg.limabs_power;
            lo.mu_points = cfg.limabs_mu_points;
            lo.ceiling = static_cast<std::size_t>(cfg.solver_ceiling);
            lo.threads = ctx.threads();
            const auto r = resolvent_scaling_study(ctx.bands(), phi, lo);
            std::ofstream os(dir + "limabs.csv");
            write_resolvent_csv(os, r);
            S["limabs"] = resolvent_json(r);
        });

    Json st = Json::array();
    for (const auto& s : rep.stages)
        st.push_back({{"stage", s.name}, {"status", s.status}, {"reason", s.reason}, {"exit_code", s.exit_code}});
    S["stages"] = st;
    S["exit_code"] = rep.exit_code();
    detail::write_text(dir + "summary.json", S.dump(2) + "\n");

    std::ostringstream tx;
    tx << "config " << ctx.hash() << "\n\nstages\n";
    for (const auto& s : rep.stages)
        tx << "  " << s.name << ": " << s.status << (s.reason.empty() ? "" : " (" + s.reason + ")") << '\n';
    if (ok["coeffs"])
        tx << "\ncoefficients\n  a0(f)        " << detail::fixed(a0.value) << " +- " << detail::fixed(a0.total_error(), 2)
           << "\n  a0^(1)(f)    " << detail::fixed(a0_band1.value) << " +- "
           << detail::fixed(a0_band1.total_error(), 2) << "\n  a0 |x|<=" << detail::fixed(kPi * cfg.box_cells, 4)
           << "  " << detail::fixed(a0_window.value) << '\n';
    if (S.contains("triangle")) {
        tx << "\ntriangle (tol " << detail::fixed(S["triangle"]["tolerance"].get<double>(), 3) << ")\n";
        for (const auto& e : S["triangle"]["edges"])
            tx << "  " << e["pair"].get<std::string>() << ": " << detail::fixed(e["lhs"].get<double>()) << " vs "
               << detail::fixed(e["rhs"].get<double>()) << "  diff " << detail::fixed(e["diff"].get<double>(), 3)
               << (e["pass"].get<bool>() ? "  pass" : "  FAIL") << '\n';
    }
    if (S.contains("limabs"))
        tx << "\nlimiting absorption (" << S["limabs"]["label"].get<std::string>() << ")\n  slope "
           << detail::fixed(S["limabs"]["slope"].get<double>(), 4) << "  plateau "
           << detail::fixed(S["limabs"]["plateau"].get<double>(), 4) << '\n';
    tx << "\nexit code " << rep.exit_code() << '\n';
    rep.text = tx.str();
    detail::write_text(dir + "summary.txt", rep.text);
    return rep;
}

}  // namespace ssflab
