#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ssflab/ssflab.hpp"

using namespace ssflab;

namespace {

struct Globals {
    std::string config;
    std::string out;
    unsigned threads = 0;
};

ExperimentConfig load(const Globals& g)
{
    return g.config.empty() ? ExperimentConfig{} : load_config_file(g.config);
}

std::string out_dir(const Globals& g, const ExperimentConfig& cfg)
{
    const std::string d = g.out.empty() ? cfg.output_dir : g.out;
    std::filesystem::create_directories(d);
    return d + "/";
}

unsigned thread_count(const Globals& g)
{
    return g.threads > 0 ? g.threads : std::max(1u, std::thread::hardware_concurrency());
}

std::ofstream open_csv(const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write '" + path + "'");
    return os;
}

void write_summary(const std::string& dir, const ExperimentContext& ctx, const std::string& command, Json body)
{
    Json s;
    s["command"] = command;
    s["config_hash"] = ctx.hash();
    for (auto it = body.begin(); it != body.end(); ++it) s[it.key()] = it.value();
    std::ofstream os(dir + "summary.json", std::ios::binary);
    os << s.dump(2) << '\n';
}

ResolventStudyOptions study_options(const ExperimentContext& ctx)
{
    const auto& c = ctx.config();
    ResolventStudyOptions o;
    o.a = c.window_a;
    o.b = c.window_b;
    o.h_grid = c.limabs_h_grid;
    o.box_growth = c.limabs_box_growth;
    o.points_per_cell = c.box_points_per_cell;
    o.eta0 = c.limabs_eta0;
    o.alpha = c.limabs_alpha;
    o.l = c.limabs_power;
    o.mu_points = c.limabs_mu_points;
    o.ceiling = static_cast<std::size_t>(c.solver_ceiling);
    o.threads = ctx.threads();
    return o;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Semiclassical spectral shift numerics for slowly perturbed periodic Schroedinger operators"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "configuration file (key = value)");
    app.add_option("--out", g.out, "output directory (default: output.dir from the config)");
    app.add_option("--threads", g.threads, "worker threads (default: hardware concurrency)");

    auto* bands = app.add_subcommand("bands", "band table: bands.csv");
    auto* dos = app.add_subcommand("dos", "density of states: dos.csv");
    double dos_lo = std::numeric_limits<double>::quiet_NaN(), dos_hi = dos_lo;
    int dos_n = 401;
    dos->add_option("--mu-min", dos_lo, "lowest energy");
    dos->add_option("--mu-max", dos_hi, "highest energy");
    dos->add_option("--points", dos_n, "number of energies")->check(CLI::Range(2, 1000000));

    auto* fermi = app.add_subcommand("fermi", "Fermi sets and (h2) certificate: fermi.csv");
    std::vector<double> fermi_mu;
    fermi->add_option("--mu", fermi_mu, "energies (default: window ends and midpoint)");

    auto* coeffs = app.add_subcommand("coeffs", "a0(f), a0^(1)(f), gamma0: summary.json");
    std::optional<double> coeff_mu;
    bool coeff_pairing = false;
    coeffs->add_option("--mu", coeff_mu, "energy for gamma0 (default: window midpoint)");
    coeffs->add_flag("--duality", coeff_pairing, "also pair gamma0 against f");

    auto* trace = app.add_subcommand("trace", "box trace differences: trace.csv");
    std::vector<double> trace_h;
    trace->add_option("--h-grid", trace_h, "h values (default: h.grid)");

    auto* ssf = app.add_subcommand("ssf", "smoothed SSF derivative: ssf.csv");
    std::vector<double> ssf_h;
    std::optional<double> ssf_mu, ssf_eps;
    ssf->add_option("--h-grid", ssf_h, "h values (default: ssf.h)");
    ssf->add_option("--mu", ssf_mu, "energy (default: window midpoint)");
    ssf->add_option("--eps", ssf_eps, "mollifier half-width (default: ssf.epsilon)");

    auto* effham = app.add_subcommand("effham", "effective Hamiltonian trace: effham.csv");
    std::vector<double> eff_h;
    int eff_modes = 0;
    effham->add_option("--h-grid", eff_h, "h values (default: effham.h)");
    effham->add_option("--modes", eff_modes, "cap on 2J+1 (default: effham.max_modes)");

    auto* limabs = app.add_subcommand("limabs", "weighted resolvent probe: limabs.csv");

    auto* sweep = app.add_subcommand("sweep", "h-sweep with asymptotic fit: sweep.csv");
    std::string sweep_obs = "trace_diff";
    std::optional<double> sweep_mu;
    int sweep_order = 2;
    sweep->add_option("--observable", sweep_obs, "trace_diff | smoothed_ssf | effective_trace_diff | resolvent_norm");
    sweep->add_option("--mu", sweep_mu, "energy for smoothed_ssf (default: window midpoint)");
    sweep->add_option("--order", sweep_order, "fit order (0, 1 or 2)");

    auto* run = app.add_subcommand("run", "full pipeline");
    std::string cache;
    run->add_option("--cache", cache, "directory for cached box spectra");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        ExperimentContext ctx(load(g), thread_count(g), cache);
        const auto& cfg = ctx.config();
        const std::string dir = out_dir(g, cfg);
        const double mid = 0.5 * (cfg.window_a + cfg.window_b);

        if (*bands) {
            auto os = open_csv(dir + "bands.csv");
            write_bands_csv(os, ctx.bands());
            Json b = Json::array();
            for (int p = 0; p < ctx.bands().bands; ++p) {
                const auto [lo, hi] = band_extrema(ctx.bands(), p);
                b.push_back({{"band", p + 1}, {"min", lo}, {"max", hi}});
            }
            write_summary(dir, ctx, "bands", {{"bands", b}});
        } else if (*dos) {
            const auto& bs = ctx.bands();
            const double lo = std::isfinite(dos_lo) ? dos_lo : bs.band_min(0) - 0.5;
            const double hi = std::isfinite(dos_hi) ? dos_hi : bs.band_min(bs.bands - 1);
            if (!(hi > lo)) throw ValidationError("empty energy range");
            std::vector<double> mus(static_cast<std::size_t>(dos_n));
            for (int i = 0; i < dos_n; ++i) mus[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (dos_n - 1);
            auto os = open_csv(dir + "dos.csv");
            write_dos_csv(os, dos_table(bs, mus, ctx.threads()));
            write_summary(dir, ctx, "dos", {{"mu_min", lo}, {"mu_max", hi}, {"points", dos_n}});
        } else if (*fermi) {
            if (fermi_mu.empty()) fermi_mu = {cfg.window_a, mid, cfg.window_b};
            auto os = open_csv(dir + "fermi.csv");
            write_fermi_csv(os, ctx.bands(), fermi_mu);
            const auto c = check_noncritical_simple(ctx.bands(), cfg.window_a, cfg.window_b);
            write_summary(dir, ctx, "fermi", {{"h2", certificate_json(c)}});
            if (!c.pass()) throw CertificationError("(h2) fails on the window");
        } else if (*coeffs) {
            CoeffOptions co;
            co.threads = ctx.threads();
            const auto& bs = ctx.bands();
            const auto& f = ctx.test_function();
            Json C;
            const auto a0 = a0_weak_coefficient(bs, ctx.perturbation(), f, co);
            C["a0"] = coefficient_json(a0);
            auto c1 = co;
            c1.only_band = 0;
            C["a0_band1"] = coefficient_json(a0_weak_coefficient(bs, ctx.perturbation(), f, c1));
            const double mu = coeff_mu.value_or(mid);
            C["gamma0"] = coefficient_json(gamma0_pointwise(bs, ctx.perturbation(), mu, co));
            C["gamma0"]["mu"] = mu;
            if (coeff_pairing) {
                const auto p = gamma0_pairing(bs, ctx.perturbation(), f, co);
                C["pairing"] = coefficient_json(p);
                C["duality_defect"] = std::abs(a0.value + p.value);
                C["duality_error"] = a0.total_error() + p.total_error();
            }
            write_summary(dir, ctx, "coeffs", {{"coefficients", C}});
        } else if (*trace) {
            if (trace_h.empty()) trace_h = cfg.h_grid;
            std::vector<BoxTraceRow> rows;
            for (double h : trace_h) {
                const auto opH = ctx.box(h, true), op0 = ctx.box(h, false);
                BoxTraceRow r;
                r.h = h;
                r.L = opH.half_length;
                r.n = opH.n;
                r.trace_diff = trace_diff(opH, ctx.spectrum(opH), op0, ctx.spectrum(op0), ctx.test_function());
                r.boundary_tol = ctx.trace_tail(opH, ctx.test_function());
                r.cutoff_flag = cutoff_flag(opH, ctx.test_function());
                rows.push_back(r);
            }
            auto os = open_csv(dir + "trace.csv");
            write_box_csv(os, rows);
            write_summary(dir, ctx, "trace", {{"rows", rows.size()}});
        } else if (*ssf) {
            if (ssf_h.empty()) ssf_h = {cfg.ssf_h};
            const double mu = ssf_mu.value_or(mid), eps = ssf_eps.value_or(cfg.ssf_epsilon);
            auto os = open_csv(dir + "ssf.csv");
            os << "h,mu,eps,value,h_value,mean_spacing,resolved\n";
            bool all = true;
            for (double h : ssf_h) {
                const auto opH = ctx.box(h, true), op0 = ctx.box(h, false);
                const auto s = smoothed_ssf_derivative(opH, ctx.spectrum(opH), op0, ctx.spectrum(op0), mu, eps);
                all = all && s.resolved;
                os << io::num(h) << ',' << io::num(mu) << ',' << io::num(eps) << ',' << io::num(s.value) << ','
                   << io::num(h * s.value) << ',' << io::num(s.mean_spacing) << ',' << (s.resolved ? 1 : 0) << '\n';
            }
            write_summary(dir, ctx, "ssf", {{"mu", mu}, {"eps", eps}, {"resolved", all}});
            if (!all) throw NumericalGuardError("under-resolved: eps below 4 mean spacings");
        } else if (*effham) {
            if (eff_h.empty()) eff_h = {cfg.effham_h};
            CoeffOptions co;
            co.threads = ctx.threads();
            co.only_band = 0;
            const auto a01 = a0_weak_coefficient(ctx.bands(), ctx.perturbation(), ctx.test_function(), co);
            auto os = open_csv(dir + "effham.csv");
            os << "h,J,trace_diff,prediction,rel_err,phi_tail,tail_resolved\n";
            Json recs = Json::array();
            for (double h : eff_h) {
                EffectiveOptions eo;
                eo.max_modes = eff_modes > 0 ? eff_modes : cfg.effham_max_modes;
                const auto eff = effective_operator(ctx.bands(), ctx.perturbation(), h, eo);
                const auto r = effham_record(eff, effective_trace_diff(eff, ctx.test_function(), ctx.perturbation()),
                                             a01.value);
                os << io::num(r.h) << ',' << r.J << ',' << io::num(r.trace_diff) << ',' << io::num(r.prediction) << ','
                   << io::num(r.rel_err) << ',' << io::num(r.phi_tail) << ',' << (r.tail_resolved ? 1 : 0) << '\n';
                recs.push_back(Json::parse(r.to_json()));
            }
            write_summary(dir, ctx, "effham", {{"a0_band1", coefficient_json(a01)}, {"records", recs}});
        } else if (*limabs) {
            const auto r = resolvent_scaling_study(ctx.bands(), ctx.perturbation(), study_options(ctx));
            auto os = open_csv(dir + "limabs.csv");
            write_resolvent_csv(os, r);
            write_summary(dir, ctx, "limabs", {{"limabs", resolvent_json(r)}});
        } else if (*sweep) {
            SweepOptions so;
            so.fit_order = sweep_order;
            so.raw_csv = dir + "sweep.csv";
            if (sweep_mu) so.mu = *sweep_mu;
            const auto r = h_sweep(ctx, parse_observable(sweep_obs), so);
            write_summary(dir, ctx, "sweep", {{"sweep", r.to_json()}});
            if (!r.fit) throw NumericalGuardError(r.fit_error);
        } else if (*run) {
            const auto r = run_experiment(ctx, dir);
            std::cout << r.text;
            return r.exit_code();
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
}
