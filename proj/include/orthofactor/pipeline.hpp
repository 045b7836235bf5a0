#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "orthofactor/config.hpp"
#include "orthofactor/csv.hpp"
#include "orthofactor/diagnostics.hpp"
#include "orthofactor/errors.hpp"
#include "orthofactor/map_explorer.hpp"
#include "orthofactor/model.hpp"
#include "orthofactor/sampler_ghosh_dunson.hpp"
#include "orthofactor/sampler_normal.hpp"
#include "orthofactor/sampler_orthonormal.hpp"
#include "orthofactor/trace.hpp"

namespace orthofactor {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitNumerical = 3, kExitIo = 4 };

struct ChainSpec {
    ModelKind model = ModelKind::spsl_orthonormal;
    PriorSpec prior;
    Index sweeps = 3000;
    Index burn_in = 500;
    Index thin = 1;
    bool adaptive_K = false;
    std::uint64_t seed = 1;
    std::vector<TracedEntry> traced;
    LatitudeOptions latitude{1, true};  // adaptation runs during burn-in only
    bool random_scan = false;
    std::optional<Matrix> angle_reference;  // V(Ω₀); first retained V(Ω) when unset
    int factor_warmup = 20;                 // Ω-only updates before the first sweep
};

/// One retained draw. `aligned` holds the loadings matched to the reference
/// columns (padded with zero columns when the sample has fewer).
struct SampleView {
    std::uint64_t sweep;
    const Matrix& aligned;
    const Vector& sigma;
    const Matrix& omega;
    Index K;
};

struct ChainResult {
    std::uint64_t seed = 0;
    TraceStore traces;
    std::vector<std::vector<TruncNormMixtureParams>> conditionals;  // per traced entry; a = 0 when unavailable
    std::vector<std::uint64_t> angle_sweeps;
    std::vector<double> angles;
    Matrix B_mean;
    Vector Sigma_mean;
    Index retained = 0;
    double seconds = 0.0;
};

namespace detail {

/// Conditional of β_jk = q_jk·r_k under the Ghosh–Dunson model, written as
/// exp(−aβ² + bβ) (c = 0). a = 0 flags r_k = 0.
inline TruncNormMixtureParams gd_loading_conditional(Index j, Index k, const GDState& g, const ObservationMatrix& y,
                                                     const PriorSpec& prior) {
    const double r = g.r[k];
    if (!(std::abs(r) > 0.0)) return {0.0, 0.0, 0.0};
    const double sq = g.Omega.row(k).squaredNorm();
    const RowVector partial = y.data.row(j) - (g.Q.row(j).cwiseProduct(g.r.transpose())) * g.Omega +
                              g.Q(j, k) * r * g.Omega.row(k);
    const auto c = gd_q_conditional(r, sq, g.Sigma[j], g.Omega.row(k).dot(partial), gd_precision(g.Gamma(j, k) != 0, prior));
    const double a = c.precision / (2.0 * r * r);
    return {a, 2.0 * a * r * c.mean, 0.0};
}

inline GDState gd_initial_state(const MapEstimate& init, Index n, FactorMode mode, std::uint64_t seed,
                                 const PriorSpec& prior) {
    const Index G = init.B_hat.rows(), K = init.B_hat.cols();
    GDState g;
    g.rng = Rng(seed);
    g.factor_mode = mode;
    g.r = Vector::Ones(K);
    g.Q = init.B_hat;
    for (Index k = 0; k < K; ++k) {
        const double m = init.B_hat.col(k).cwiseAbs().maxCoeff();
        if (m > 0.0) {
            g.r[k] = m;
            g.Q.col(k) /= m;
        }
    }
    g.Theta = init.Theta_hat;
    g.Sigma = init.Sigma_hat;
    Rng draw = g.rng.substream(0);
    g.Omega = mode == FactorMode::normal ? standard_normal_matrix(K, n, draw) : sample_scaled_stiefel(K, n, draw);
    g.Gamma.resize(G, K);
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < G; ++j) g.Gamma(j, k) = gd_slab_probability(g.Q(j, k), g.Theta[k], prior) > 0.5;
    g.latitude.resize(static_cast<std::size_t>(K));
    return g;
}

}  // namespace detail

/// Runs one chain started at `init` (MAP estimate in its own column order);
/// retained draws are aligned to `reference` before tracing and averaging.
inline ChainResult run_chain(const ObservationMatrix& y, const ChainSpec& spec, const MapEstimate& init,
                             const Matrix& reference, const std::function<void(const SampleView&)>& observer = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    spec.prior.validate();
    if (spec.burn_in >= spec.sweeps || spec.thin < 1) throw ValidationError("chain needs burn_in < sweeps and thin >= 1");
    if (spec.adaptive_K && is_gd(spec.model)) throw ValidationError("adaptive K is available for the spsl models only");
    const Index G = y.responses(), n = y.samples(), Kr = reference.cols();
    if (reference.rows() != G || init.B_hat.rows() != G) throw ValidationError("reference loadings have the wrong row count");
    for (const auto& e : spec.traced)
        if (e.j < 0 || e.j >= G || e.k < 0 || e.k >= Kr)
            throw ValidationError("traced entry " + e.name() + " is outside the loading matrix");
    const FactorMode mode = factor_mode_of(spec.model);
    if (mode == FactorMode::orthonormal && init.B_hat.cols() > n)
        throw ValidationError("orthonormal factors need K <= n");

    std::vector<std::string> names;
    for (const auto& e : spec.traced) names.push_back(e.name());
    if (spec.adaptive_K) names.push_back("K");

    ChainResult res;
    res.seed = spec.seed;
    res.traces = TraceStore(names, 1);
    res.conditionals.resize(spec.traced.size());
    res.B_mean = Matrix::Zero(G, Kr);
    res.Sigma_mean = Vector::Zero(G);

    const bool gd = is_gd(spec.model);
    ChainState s;
    GDState g;
    if (gd) {
        g = detail::gd_initial_state(init, n, mode, spec.seed, spec.prior);
    } else {
        s = initial_state(init.B_hat, init.Sigma_hat, init.Theta_hat, n, mode, spec.seed);
        s.latitude.resize(static_cast<std::size_t>(s.B.cols()));
        // Allocation starts at its conditional mode given the starting loadings.
        for (Index k = 0; k < s.B.cols(); ++k)
            for (Index j = 0; j < G; ++j) s.Gamma(j, k) = slab_probability(s.B(j, k), s.Theta[k], spec.prior) > 0.5;
    }
    // The prior draw of Ω ignores the data; a few factor updates given the
    // starting loadings precede the first full sweep.
    {
        Matrix& omega = gd ? g.Omega : s.Omega;
        const Vector& sigma = gd ? g.Sigma : s.Sigma;
        const Matrix B0 = gd ? g.loadings() : s.B;
        Rng& rng = gd ? g.rng : s.rng;
        auto& tuning = gd ? g.latitude : s.latitude;
        for (int pass = 0; pass < spec.factor_warmup; ++pass) {
            if (mode == FactorMode::normal) update_factors_normal(omega, B0, sigma, y.data, rng);
            else update_factors_orthonormal(omega, B0, sigma, y.data, tuning, LatitudeOptions{1, true}, rng);
        }
    }

    std::optional<Matrix> V_ref = spec.angle_reference;
    std::vector<double> values(names.size());
    for (Index sweep = 1; sweep <= spec.sweeps; ++sweep) {
        LatitudeOptions lat = spec.latitude;
        lat.adapt = spec.latitude.adapt && sweep <= spec.burn_in;
        switch (spec.model) {
            case ModelKind::spsl_normal:
            case ModelKind::spsl_normal_groupmoves:
                gibbs_sweep_normal(s, y, spec.prior,
                                   NormalSweepOptions{spec.model == ModelKind::spsl_normal_groupmoves, spec.random_scan});
                break;
            case ModelKind::spsl_orthonormal:
                gibbs_sweep_orthonormal(s, y, spec.prior, OrthonormalSweepOptions{lat, spec.random_scan});
                break;
            case ModelKind::gd_normal:
            case ModelKind::gd_orthonormal:
                gd_sweep(g, y, spec.prior, GDSweepOptions{lat});
                break;
        }
        if (spec.adaptive_K && s.B.cols() < 60) adapt_factor_count(s, spec.prior, s.rng);

        if (sweep <= spec.burn_in || (sweep - spec.burn_in) % spec.thin != 0) continue;

        const Matrix B = gd ? g.loadings() : s.B;
        const Matrix& omega = gd ? g.Omega : s.Omega;
        const Vector& sigma = gd ? g.Sigma : s.Sigma;
        if (!B.allFinite() || !sigma.allFinite() || !omega.allFinite())
            throw NumericalError("chain state became non-finite at sweep " + std::to_string(sweep));
        const Index Ks = B.cols();
        Matrix padded = B;
        if (Ks < Kr) {
            padded = Matrix::Zero(G, Kr);
            padded.leftCols(Ks) = B;
        }
        const Alignment al = align_to_reference(padded, reference);

        for (std::size_t t = 0; t < spec.traced.size(); ++t) {
            const auto& e = spec.traced[t];
            values[t] = al.aligned(e.j, e.k);
            const Index c = al.permutation[static_cast<std::size_t>(e.k)];
            TruncNormMixtureParams p{0.0, 0.0, 0.0};
            if (c < Ks) {
                p = gd ? detail::gd_loading_conditional(e.j, c, g, y, spec.prior)
                       : loading_conditional_params(e.j, c, s, y, spec.prior);
                if (al.signs[static_cast<std::size_t>(c)] < 0) p.b = -p.b;
            }
            res.conditionals[t].push_back(p);
        }
        if (spec.adaptive_K) values.back() = static_cast<double>(Ks);
        res.traces.record(static_cast<std::uint64_t>(sweep), values);

        if (Ks <= n) {
            const Matrix V = lq_decompose(omega).V_mat;
            if (!V_ref) V_ref = V;
            res.angle_sweeps.push_back(static_cast<std::uint64_t>(sweep));
            res.angles.push_back(column_space_angle(*V_ref, V));
        }

        res.B_mean += al.aligned.leftCols(Kr);
        res.Sigma_mean += sigma;
        ++res.retained;
        if (observer) observer(SampleView{static_cast<std::uint64_t>(sweep), al.aligned, sigma, omega, Ks});
    }
    if (res.retained > 0) {
        res.B_mean /= static_cast<double>(res.retained);
        res.Sigma_mean /= static_cast<double>(res.retained);
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

/// Runs `count` independent jobs on min(count, hardware threads) workers and
/// rethrows the first failure (lowest index) after all have joined.
inline void run_parallel(std::size_t count, const std::function<void(std::size_t)>& job) {
    const std::size_t workers =
        std::max<std::size_t>(1, std::min<std::size_t>(count, std::max(1u, std::thread::hardware_concurrency())));
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                job(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

namespace detail {

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    auto out = open_output(path);
    out << j.dump(2) << '\n';
    close_output(out, path);
}

inline nlohmann::ordered_json version_info() {
    nlohmann::ordered_json v;
    v["orthofactor"] = kVersion;
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                         "." + std::to_string(NLOHMANN_JSON_VERSION_PATCH);
#if defined(__clang__)
    v["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    v["compiler"] = std::string("gcc ") + __VERSION__;
#endif
    v["cxx_standard"] = static_cast<long>(__cplusplus);
    return v;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Long format: block,row,col,value with 1-based indices.
inline void write_map_csv(const std::filesystem::path& path, const MapEstimate& m, double lambda0) {
    CsvWriter w(path);
    w.header({"block", "row", "col", "value"});
    for (Index k = 0; k < m.B_hat.cols(); ++k)
        for (Index j = 0; j < m.B_hat.rows(); ++j)
            w.line({"B", std::to_string(j + 1), std::to_string(k + 1), format_double(m.B_hat(j, k))});
    for (Index j = 0; j < m.Sigma_hat.size(); ++j)
        w.line({"Sigma", std::to_string(j + 1), "1", format_double(m.Sigma_hat[j])});
    for (Index k = 0; k < m.Theta_hat.size(); ++k)
        w.line({"Theta", "1", std::to_string(k + 1), format_double(m.Theta_hat[k])});
    w.line({"objective", "1", "1", format_double(m.objective)});
    w.line({"lambda0", "1", "1", format_double(lambda0)});
    w.line({"K_hat", "1", "1", std::to_string(m.K_hat)});
    w.close();
}

inline double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<std::filesystem::path> chain_dirs(const std::filesystem::path& run_dir) {
    std::vector<std::pair<int, std::filesystem::path>> found;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(run_dir, ec)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_directory() && name.rfind("chain_", 0) == 0) {
            try {
                found.emplace_back(std::stoi(name.substr(6)), entry.path());
            } catch (const std::exception&) {
            }
        }
    }
    if (ec) throw IoError("cannot read directory " + run_dir.string() + ": " + ec.message());
    std::sort(found.begin(), found.end());
    std::vector<std::filesystem::path> out;
    for (auto& f : found) out.push_back(f.second);
    return out;
}

inline std::vector<std::string> trace_names(const std::filesystem::path& chain_dir) {
    std::vector<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(chain_dir)) {
        const std::string f = entry.path().filename().string();
        if (f.rfind("trace_", 0) == 0 && f.size() > 10 && f.substr(f.size() - 4) == ".csv")
            names.push_back(f.substr(6, f.size() - 10));
    }
    std::sort(names.begin(), names.end());
    return names;
}

inline void write_conditionals(const std::filesystem::path& path, const std::vector<std::uint64_t>& sweeps,
                               const std::vector<TruncNormMixtureParams>& params) {
    CsvWriter w(path);
    w.header({"sweep", "a", "b", "c"});
    for (std::size_t t = 0; t < params.size(); ++t)
        w.line({std::to_string(sweeps[t]), format_double(params[t].a), format_double(params[t].b),
                format_double(params[t].c)});
    w.close();
}

}  // namespace detail

struct DiagnoseReport {
    std::vector<std::string> entries;
    std::size_t chains = 0;
};

/// Pools the per-chain traces of a fit run into summary.csv (entry, mean, sd,
/// q05, q50, q95, ESS; ESS summed over chains) and Rao–Blackwellised
/// density_<param>.csv files where conditional parameters were recorded.
inline DiagnoseReport diagnose_run(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir) {
    const auto chains = detail::chain_dirs(run_dir);
    if (chains.empty()) throw IoError("no chain_<i> directories under " + run_dir.string());
    DiagnoseReport rep;
    rep.chains = chains.size();
    rep.entries = detail::trace_names(chains.front());
    if (rep.entries.empty()) throw IoError("no trace files in " + chains.front().string());

    CsvWriter summary(out_dir / "summary.csv");
    summary.header({"entry", "mean", "sd", "q05", "q50", "q95", "ESS"});
    for (const auto& name : rep.entries) {
        std::vector<double> pooled;
        double ess = 0.0;
        std::vector<TruncNormMixtureParams> cond;
        for (const auto& dir : chains) {
            const auto [sweeps, values] = TraceStore::read(dir / ("trace_" + name + ".csv"));
            if (values.size() < 10) throw ValidationError("trace " + name + " has fewer than 10 retained draws");
            ess += effective_sample_size(values).value;
            pooled.insert(pooled.end(), values.begin(), values.end());
            const auto cpath = dir / ("conditionals_" + name + ".csv");
            if (std::filesystem::exists(cpath)) {
                const CsvMatrix m = read_matrix_csv(cpath, true);
                if (m.values.cols() != 4) throw IoError(cpath.string() + ": expected columns sweep,a,b,c");
                for (Index i = 0; i < m.values.rows(); ++i)
                    if (m.values(i, 1) > 0.0) cond.push_back({m.values(i, 1), m.values(i, 2), m.values(i, 3)});
            }
        }
        const double N = static_cast<double>(pooled.size());
        double mean = 0.0;
        for (double v : pooled) mean += v;
        mean /= N;
        double ss = 0.0;
        for (double v : pooled) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / std::max(N - 1.0, 1.0));
        std::vector<double> sorted = pooled;
        std::sort(sorted.begin(), sorted.end());
        summary.line({name, format_double(mean), format_double(sd), format_double(detail::quantile_sorted(sorted, 0.05)),
                      format_double(detail::quantile_sorted(sorted, 0.5)),
                      format_double(detail::quantile_sorted(sorted, 0.95)), format_double(ess)});
        if (!cond.empty()) {
            const auto grid = default_density_grid(mean, sd);
            const auto dens = rao_blackwell_density(cond, grid);
            CsvWriter w(out_dir / ("density_" + name + ".csv"));
            w.header({"grid", "density"});
            for (std::size_t i = 0; i < grid.size(); ++i) w.line({format_double(grid[i]), format_double(dens[i])});
            w.close();
        }
    }
    summary.close();
    return rep;
}

struct LoadedData {
    ObservationMatrix y;
    std::vector<std::size_t> dropped_rows;
};

inline LoadedData load_data(const RunConfig& c) {
    CsvMatrix raw = read_matrix_csv(c.data_path, false, true);
    LoadedData d;
    d.dropped_rows = raw.dropped_rows;
    ObservationMatrix y(std::move(raw.values));
    if (!c.covariates_path.empty()) {
        const CsvMatrix cov = read_matrix_csv(c.covariates_path, true, false);
        y = residualize(y, cov.values, cov.header);
    }
    d.y = std::move(y);
    return d;
}

struct Truth {
    Matrix B0;
    Matrix Omega0;
};

inline std::optional<Truth> load_truth(const RunConfig& c) {
    if (c.truth_path.empty()) return std::nullopt;
    const std::filesystem::path dir(c.truth_path);
    Truth t;
    t.B0 = read_matrix_csv(dir / "truth_B0.csv").values;
    t.Omega0 = read_matrix_csv(dir / "truth_Omega0.csv").values;
    if (t.B0.cols() != t.Omega0.rows()) throw IoError("truth files disagree on the number of factors");
    return t;
}

/// First support row of each true column, else rows 1..min(G,5) of column 1.
inline std::vector<TracedEntry> default_traced_entries(Index G, const std::optional<Truth>& truth) {
    std::vector<TracedEntry> out;
    if (truth) {
        for (Index k = 0; k < truth->B0.cols(); ++k)
            for (Index j = 0; j < truth->B0.rows(); ++j)
                if (truth->B0(j, k) != 0.0) {
                    out.push_back({j, k});
                    break;
                }
    }
    if (out.empty())
        for (Index j = 0; j < std::min<Index>(G, 5); ++j) out.push_back({j, 0});
    return out;
}

inline nlohmann::ordered_json simulate_command(const RunConfig& c) {
    const std::filesystem::path out(c.output_dir);
    SyntheticOptions opt = c.synthetic;
    opt.seed = c.seed;
    auto [y, truth] = generate_synthetic(opt);
    write_matrix_csv(out / "data.csv", y.data);
    write_matrix_csv(out / "truth_B0.csv", truth.B0);
    write_matrix_csv(out / "truth_Omega0.csv", truth.Omega0);
    write_matrix_csv(out / "truth_Sigma0.csv", truth.Sigma0);
    detail::write_json(out / "config_resolved.json", resolved_config_json(c, y.responses()));
    nlohmann::ordered_json m;
    m["G"] = y.responses();
    m["n"] = y.samples();
    m["files"] = {"data.csv", "truth_B0.csv", "truth_Omega0.csv", "truth_Sigma0.csv"};
    return m;
}

inline nlohmann::ordered_json fit_command(RunConfig& c, std::ostream& log) {
    const std::filesystem::path out(c.output_dir);
    nlohmann::ordered_json m;
    const auto t_load = std::chrono::steady_clock::now();
    const LoadedData data = load_data(c);
    const ObservationMatrix& y = data.y;
    if (!data.dropped_rows.empty()) {
        log << "dropped " << data.dropped_rows.size() << " data row(s) with missing values\n";
        m["dropped_rows"] = data.dropped_rows;
    }
    const auto truth = load_truth(c);
    const Index G = y.responses(), n = y.samples();
    if (truth && truth->B0.rows() != G) throw ValidationError("truth_B0 rows do not match the data");
    if (truth && truth->Omega0.cols() != n) throw ValidationError("truth_Omega0 columns do not match the data");
    const PriorSpec prior = c.resolved_prior(G);
    prior.validate();
    if (factor_mode_of(c.model) == FactorMode::orthonormal && c.K > n)
        throw ConfigError("K", 0, "orthonormal factors need K <= n (" + std::to_string(n) + ")");
    m["timings"]["load_seconds"] = detail::seconds_since(t_load);

    // MAP initialisation.
    const auto t_map = std::chrono::steady_clock::now();
    MapEstimate map;
    nlohmann::ordered_json stages = nlohmann::ordered_json::array();
    if (c.ladder) {
        const auto path = run_ladder(y, c.schedule, prior, c.K, c.em);
        for (std::size_t t = 0; t < path.size(); ++t) {
            detail::write_map_csv(out / ("ladder_stage_" + std::to_string(t + 1) + ".csv"), path[t].estimate,
                                  path[t].lambda0);
            nlohmann::ordered_json st;
            st["lambda0"] = path[t].lambda0;
            st["K_hat"] = path[t].estimate.K_hat;
            st["iterations"] = path[t].estimate.iterations;
            st["converged"] = path[t].estimate.converged;
            st["objective"] = path[t].estimate.objective;
            st["relative_change"] = std::isfinite(path[t].relative_change) ? nlohmann::ordered_json(path[t].relative_change)
                                                                           : nlohmann::ordered_json(nullptr);
            stages.push_back(st);
        }
        map = path.back().estimate;
    } else {
        map = em_map(y, prior, c.K, std::nullopt, c.em);
        detail::write_map_csv(out / "ladder_stage_1.csv", map, prior.lambda0);
        stages.push_back({{"lambda0", prior.lambda0}, {"K_hat", map.K_hat}, {"iterations", map.iterations}});
    }
    m["ladder"] = stages;
    m["timings"]["map_seconds"] = detail::seconds_since(t_map);

    // Alignment reference: the MAP columns, matched to the truth when given.
    Matrix reference = map.B_hat;
    if (truth && truth->B0.cols() <= map.B_hat.cols()) reference = align_to_reference(map.B_hat, truth->B0).aligned;

    if (c.traced_entries.empty()) c.traced_entries = default_traced_entries(G, truth);
    for (const auto& e : c.traced_entries)
        if (e.j >= G || e.k >= reference.cols())
            throw ConfigError("traced_entries", 0, "entry " + e.name() + " is outside the " + std::to_string(G) + " x " +
                                                       std::to_string(reference.cols()) + " loading matrix");
    detail::write_json(out / "config_resolved.json", resolved_config_json(c, G));

    ChainSpec spec;
    spec.model = c.model;
    spec.prior = prior;
    spec.sweeps = c.sweeps;
    spec.burn_in = c.burn_in;
    spec.thin = c.thin;
    spec.adaptive_K = c.adaptive_K;
    spec.traced = c.traced_entries;
    spec.latitude = LatitudeOptions{c.latitude_steps, c.latitude_adapt};
    spec.random_scan = c.random_scan;
    if (truth && truth->Omega0.rows() <= n) spec.angle_reference = lq_decompose(truth->Omega0).V_mat;

    const auto chains = static_cast<std::size_t>(c.chains);
    std::vector<ChainResult> results(chains);
    const auto t_chain = std::chrono::steady_clock::now();
    run_parallel(chains, [&](std::size_t i) {
        ChainSpec cs = spec;
        cs.seed = derive_seed(c.seed, i);
        results[i] = run_chain(y, cs, map, reference);
        const std::filesystem::path dir = out / ("chain_" + std::to_string(i + 1));
        results[i].traces.write(dir);
        for (std::size_t t = 0; t < cs.traced.size(); ++t)
            detail::write_conditionals(dir / ("conditionals_" + cs.traced[t].name() + ".csv"), results[i].traces.sweeps(),
                                       results[i].conditionals[t]);
        CsvWriter w(dir / "angles.csv");
        w.header({"sweep", "angle"});
        for (std::size_t t = 0; t < results[i].angles.size(); ++t)
            w.line({std::to_string(results[i].angle_sweeps[t]), format_double(results[i].angles[t])});
        w.close();
    });
    m["timings"]["chains_seconds"] = detail::seconds_since(t_chain);

    Matrix B_mean = Matrix::Zero(G, reference.cols());
    Vector S_mean = Vector::Zero(G);
    double total = 0.0;
    nlohmann::ordered_json chain_info = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < chains; ++i) {
        const double w = static_cast<double>(results[i].retained);
        B_mean += w * results[i].B_mean;
        S_mean += w * results[i].Sigma_mean;
        total += w;
        chain_info.push_back({{"chain", i + 1},
                              {"seed", results[i].seed},
                              {"retained", results[i].retained},
                              {"seconds", results[i].seconds},
                              {"seconds_per_sweep", results[i].seconds / static_cast<double>(c.sweeps)}});
    }
    if (total > 0.0) {
        B_mean /= total;
        S_mean /= total;
    }
    write_matrix_csv(out / "posterior_mean_B.csv", B_mean);
    write_matrix_csv(out / "posterior_mean_Sigma.csv", S_mean);
    m["chains"] = chain_info;

    const auto rep = diagnose_run(out, out);
    m["traced_entries"] = rep.entries;
    return m;
}

inline nlohmann::ordered_json diagnose_command(const RunConfig& c) {
    detail::write_json(std::filesystem::path(c.output_dir) / "config_resolved.json", resolved_config_json(c));
    const auto rep = diagnose_run(c.data_path, c.output_dir);
    nlohmann::ordered_json m;
    m["chains"] = rep.chains;
    m["traced_entries"] = rep.entries;
    return m;
}

/// Executes the configured command and writes manifest.json. Throws on failure.
inline void execute(RunConfig c, std::ostream& log = std::cerr) {
    const auto t0 = std::chrono::steady_clock::now();
    std::filesystem::create_directories(c.output_dir);
    nlohmann::ordered_json m;
    m["command"] = to_string(c.command);
    m["seed"] = c.seed;
    nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
    for (Index i = 0; i < c.chains; ++i) seeds.push_back(derive_seed(c.seed, static_cast<std::uint64_t>(i)));
    m["chain_seeds"] = seeds;
    m["seed_derivation"] = "splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15)";
    m["versions"] = detail::version_info();
    nlohmann::ordered_json body;
    switch (c.command) {
        case Command::simulate: body = simulate_command(c); break;
        case Command::fit: body = fit_command(c, log); break;
        case Command::diagnose: body = diagnose_command(c); break;
    }
    for (auto& [k, v] : body.items()) {
        if (k == "timings") continue;
        m[k] = v;
    }
    m["timings"] = body.contains("timings") ? body["timings"] : nlohmann::ordered_json::object();
    m["timings"]["total_seconds"] = detail::seconds_since(t0);
    detail::write_json(std::filesystem::path(c.output_dir) / "manifest.json", m);
}

/// execute() with failures mapped to exit codes: 2 validation, 3 numerical, 4 I/O.
inline int run_pipeline(const RunConfig& c, std::ostream& err = std::cerr) {
    try {
        execute(c, err);
        return kExitOk;
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    }
}

}  // namespace orthofactor
