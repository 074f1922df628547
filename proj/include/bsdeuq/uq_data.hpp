#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bsdeuq/dbsde.hpp"
#include "bsdeuq/parallel.hpp"
#include "bsdeuq/problems.hpp"

// Dataset factory: samples BSDE parameter sets, runs the solver Q times per
// set, and persists {x_i, y_i, z_i} records with their run ensembles. Storage
// is JSON-Lines with a sidecar meta document; generation is checkpointed so an
// interrupted run resumes without re-solving completed records.

namespace bsdeuq {

enum class ProblemFamily { BlackScholes, Burgers };

// How (T, N, dt) are chosen per sample and which of them become features.
enum class GridPolicy {
    FixedNFixedT,    // T and N fixed; features are the base parameters only
    FixedDtVaryT,    // T drawn, dt fixed, N = round(T/dt); features += (T, N)
    FixedNVaryT,     // T drawn, N fixed, dt = T/N;         features += (T, dt)
    FixedTVaryNGrid, // T fixed, each sample solved per N in a list; features += (N)
};

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double draw(Rng& rng) const { return lo + (hi - lo) * rng.uniform(); }
    bool degenerate() const { return lo == hi; }
};

struct ParamSampler {
    ProblemFamily family = ProblemFamily::BlackScholes;
    GridPolicy policy = GridPolicy::FixedNFixedT;

    Range b_range{0.1, 0.4};
    Range t_range{0.25, 0.25};
    // Black-Scholes: S0 and R drawn; a, delta, strike fixed.
    Range s0_range{80.0, 120.0};
    Range r_range{0.001, 0.1};
    double a = 0.05;
    double delta = 0.0;
    double strike = 100.0;
    // Burgers dimension.
    int burgers_d = 5;

    int n_fixed = 10;       // FixedNFixedT / FixedNVaryT
    double dt_fixed = 0.025; // FixedDtVaryT
    std::vector<int> n_grid; // FixedTVaryNGrid

    bool varies_t() const {
        return policy == GridPolicy::FixedDtVaryT || policy == GridPolicy::FixedNVaryT;
    }

    int base_feature_count() const { return family == ProblemFamily::BlackScholes ? 3 : 1; }

    int feature_count() const {
        switch (policy) {
        case GridPolicy::FixedNFixedT: return base_feature_count();
        case GridPolicy::FixedDtVaryT:
        case GridPolicy::FixedNVaryT: return base_feature_count() + 2;
        case GridPolicy::FixedTVaryNGrid: return base_feature_count() + 1;
        }
        return base_feature_count();
    }

    void validate() const {
        if (!(b_range.lo <= b_range.hi) || !(t_range.lo <= t_range.hi))
            throw std::invalid_argument("ParamSampler: inverted range");
        if (!(b_range.lo > 0.0)) throw std::invalid_argument("ParamSampler: b must be positive");
        if (!(t_range.lo > 0.0)) throw std::invalid_argument("ParamSampler: T must be positive");
        if (policy == GridPolicy::FixedTVaryNGrid) {
            if (n_grid.empty()) throw std::invalid_argument("ParamSampler: empty N grid");
            if (!t_range.degenerate())
                throw std::invalid_argument("ParamSampler: N-grid policy needs a fixed T");
        }
        if ((policy == GridPolicy::FixedNFixedT || policy == GridPolicy::FixedNVaryT) &&
            n_fixed < 1)
            throw std::invalid_argument("ParamSampler: N must be positive");
        if (policy == GridPolicy::FixedNFixedT && !t_range.degenerate())
            throw std::invalid_argument("ParamSampler: fixed-T policy needs a degenerate T range");
        if (policy == GridPolicy::FixedDtVaryT && !(dt_fixed > 0.0))
            throw std::invalid_argument("ParamSampler: dt must be positive");
        if (family == ProblemFamily::Burgers && burgers_d < 1)
            throw std::invalid_argument("ParamSampler: burgers_d must be positive");
    }
};

struct SampledParams {
    std::vector<double> features;
    BlackScholesParams bs;
    BurgersParams burgers;
    TimeGrid grid{1.0, 1};
};

namespace detail {

// dt is declared, N is derived: N = round(T/dt), at least 2.
inline int steps_from_dt(double t, double dt) {
    return std::max(2, static_cast<int>(std::llround(t / dt)));
}

inline SampledParams assemble(const ParamSampler& s, double b, double s0, double r, double t,
                              int n) {
    SampledParams sp;
    sp.grid = TimeGrid(t, n);
    if (s.family == ProblemFamily::BlackScholes) {
        sp.bs = BlackScholesParams{s.a, b, s0, r, s.delta, s.strike, t};
        sp.features = {b, s0, r};
    } else {
        sp.burgers = BurgersParams{b, t, s.burgers_d};
        sp.features = {b};
    }
    switch (s.policy) {
    case GridPolicy::FixedNFixedT: break;
    case GridPolicy::FixedDtVaryT:
        sp.features.push_back(t);
        sp.features.push_back(static_cast<double>(n));
        break;
    case GridPolicy::FixedNVaryT:
        sp.features.push_back(t);
        sp.features.push_back(sp.grid.dt());
        break;
    case GridPolicy::FixedTVaryNGrid:
        sp.features.push_back(static_cast<double>(n));
        break;
    }
    return sp;
}

} // namespace detail

// M i.i.d. draws; for the N-grid policy each drawn set is expanded over the
// grid, giving M * |grid| entries in grid-major blocks. Draw order per sample:
// b, then (S0, R) for Black-Scholes, then T when the policy varies it.
inline std::vector<SampledParams> sample_params(const ParamSampler& s, long m,
                                                std::uint64_t seed) {
    s.validate();
    if (m < 1) throw std::invalid_argument("sample_params: M must be >= 1");
    std::vector<SampledParams> out;
    Rng rng(seed);
    for (long i = 0; i < m; ++i) {
        const double b = s.b_range.draw(rng);
        double s0 = 0.0, r = 0.0;
        if (s.family == ProblemFamily::BlackScholes) {
            s0 = s.s0_range.draw(rng);
            r = s.r_range.draw(rng);
        }
        const double t = s.varies_t() ? s.t_range.draw(rng) : s.t_range.lo;
        switch (s.policy) {
        case GridPolicy::FixedNFixedT:
        case GridPolicy::FixedNVaryT:
            out.push_back(detail::assemble(s, b, s0, r, t, s.n_fixed));
            break;
        case GridPolicy::FixedDtVaryT:
            out.push_back(detail::assemble(s, b, s0, r, t, detail::steps_from_dt(t, s.dt_fixed)));
            break;
        case GridPolicy::FixedTVaryNGrid:
            for (int n : s.n_grid) out.push_back(detail::assemble(s, b, s0, r, t, n));
            break;
        }
    }
    return out;
}

inline BsdeProblem make_problem(const ParamSampler& s, const SampledParams& sp) {
    return s.family == ProblemFamily::BlackScholes ? black_scholes_problem(sp.bs)
                                                   : burgers_problem(sp.burgers);
}

inline int problem_dim(const ParamSampler& s) {
    return s.family == ProblemFamily::BlackScholes ? 1 : s.burgers_d;
}

// Reconstructs the parameter point from a stored feature vector; the layout is
// the inverse of sample_params.
inline SampledParams params_from_features(const ParamSampler& s,
                                          const std::vector<double>& x) {
    if (x.size() != static_cast<std::size_t>(s.feature_count()))
        throw std::invalid_argument("params_from_features: feature size mismatch");
    const double b = x[0];
    double s0 = 0.0, r = 0.0;
    std::size_t pos = 1;
    if (s.family == ProblemFamily::BlackScholes) {
        s0 = x[1];
        r = x[2];
        pos = 3;
    }
    double t = s.t_range.lo;
    int n = s.n_fixed;
    switch (s.policy) {
    case GridPolicy::FixedNFixedT: break;
    case GridPolicy::FixedDtVaryT:
        t = x[pos];
        n = static_cast<int>(std::llround(x[pos + 1]));
        break;
    case GridPolicy::FixedNVaryT:
        t = x[pos];
        n = s.n_fixed;
        break;
    case GridPolicy::FixedTVaryNGrid:
        n = static_cast<int>(std::llround(x[pos]));
        break;
    }
    return detail::assemble(s, b, s0, r, t, n);
}

inline double truth_y0(const ParamSampler& s, const std::vector<double>& x) {
    const SampledParams sp = params_from_features(s, x);
    if (s.family == ProblemFamily::BlackScholes)
        return black_scholes_analytic(sp.bs, 0.0, sp.bs.s0).first;
    return 0.5;
}

inline std::vector<double> truth_z0(const ParamSampler& s, const std::vector<double>& x) {
    const SampledParams sp = params_from_features(s, x);
    if (s.family == ProblemFamily::BlackScholes)
        return {black_scholes_analytic(sp.bs, 0.0, sp.bs.s0).second};
    return std::vector<double>(static_cast<std::size_t>(s.burgers_d),
                               sp.burgers.b / (4.0 * s.burgers_d));
}

// Solver hyperparameters shared by every record; the z-net is sized per
// problem dimension as eta = hidden_width_offset + d.
struct SolverSettings {
    int batch = 128;
    long steps = 2000;
    LrSchedule lr = LrSchedule::constant(1e-2, 2000);
    double y0_init_min = 0.0;
    double y0_init_max = 1.0;
    int hidden_layers = 2;
    int hidden_width_offset = 10;
    bool batch_norm = true;

    DbsdeConfig make_config(const TimeGrid& grid, int d, std::uint64_t seed) const {
        DbsdeConfig cfg;
        cfg.grid = grid;
        cfg.batch = batch;
        cfg.steps = steps;
        cfg.lr = lr;
        cfg.z_net = default_z_net(d);
        cfg.z_net.hidden_layers = hidden_layers;
        cfg.z_net.hidden_width = hidden_width_offset + d;
        cfg.z_net.batch_norm = batch_norm;
        cfg.y0_init_min = y0_init_min;
        cfg.y0_init_max = y0_init_max;
        cfg.base_seed = seed;
        return cfg;
    }
};

struct UqRecord {
    long index = 0;
    std::vector<double> x;
    double y = 0.0;                          // first-run Y0 approximation
    std::vector<double> z;                   // first-run Z0 approximation
    std::vector<double> ens_y;               // [Q]
    std::vector<std::vector<double>> ens_z;  // [Q][d]
    std::vector<std::uint64_t> seeds;        // [Q]
    std::vector<bool> div;                   // [Q]
};

struct UqDataset {
    std::vector<UqRecord> records;
    std::string problem_kind; // "black_scholes" | "burgers"
    nlohmann::json meta;      // sampler + solver snapshot, M, Q, seed
    std::vector<std::size_t> train_idx, valid_idx, test_idx;

    bool has_split() const { return !train_idx.empty(); }
};

inline void to_json(nlohmann::json& j, const Range& r) { j = {{"lo", r.lo}, {"hi", r.hi}}; }
inline void from_json(const nlohmann::json& j, Range& r) {
    j.at("lo").get_to(r.lo);
    j.at("hi").get_to(r.hi);
}

inline std::string to_string(GridPolicy p) {
    switch (p) {
    case GridPolicy::FixedNFixedT: return "fixed_N_fixed_T";
    case GridPolicy::FixedDtVaryT: return "fixed_dt_vary_T";
    case GridPolicy::FixedNVaryT: return "fixed_N_vary_T";
    case GridPolicy::FixedTVaryNGrid: return "fixed_T_vary_N_grid";
    }
    return "fixed_N_fixed_T";
}

inline GridPolicy grid_policy_from_string(const std::string& s) {
    if (s == "fixed_N_fixed_T") return GridPolicy::FixedNFixedT;
    if (s == "fixed_dt_vary_T") return GridPolicy::FixedDtVaryT;
    if (s == "fixed_N_vary_T") return GridPolicy::FixedNVaryT;
    if (s == "fixed_T_vary_N_grid") return GridPolicy::FixedTVaryNGrid;
    throw std::invalid_argument("unknown grid policy: " + s);
}

inline void to_json(nlohmann::json& j, const ParamSampler& s) {
    j = nlohmann::json{
        {"family", s.family == ProblemFamily::BlackScholes ? "black_scholes" : "burgers"},
        {"policy", to_string(s.policy)},
        {"b_range", s.b_range},
        {"t_range", s.t_range},
        {"s0_range", s.s0_range},
        {"r_range", s.r_range},
        {"a", s.a},
        {"delta", s.delta},
        {"strike", s.strike},
        {"burgers_d", s.burgers_d},
        {"n_fixed", s.n_fixed},
        {"dt_fixed", s.dt_fixed},
        {"n_grid", s.n_grid}};
}

inline void from_json(const nlohmann::json& j, ParamSampler& s) {
    s.family = j.at("family").get<std::string>() == "burgers" ? ProblemFamily::Burgers
                                                              : ProblemFamily::BlackScholes;
    s.policy = grid_policy_from_string(j.at("policy").get<std::string>());
    j.at("b_range").get_to(s.b_range);
    j.at("t_range").get_to(s.t_range);
    j.at("s0_range").get_to(s.s0_range);
    j.at("r_range").get_to(s.r_range);
    j.at("a").get_to(s.a);
    j.at("delta").get_to(s.delta);
    j.at("strike").get_to(s.strike);
    j.at("burgers_d").get_to(s.burgers_d);
    j.at("n_fixed").get_to(s.n_fixed);
    j.at("dt_fixed").get_to(s.dt_fixed);
    j.at("n_grid").get_to(s.n_grid);
}

inline void to_json(nlohmann::json& j, const LrSchedule& lr) {
    j = {{"boundaries", lr.boundaries}, {"rates", lr.rates}};
}

inline void from_json(const nlohmann::json& j, LrSchedule& lr) {
    j.at("boundaries").get_to(lr.boundaries);
    j.at("rates").get_to(lr.rates);
}

inline void to_json(nlohmann::json& j, const SolverSettings& s) {
    j = nlohmann::json{{"batch", s.batch},
                       {"steps", s.steps},
                       {"lr", s.lr},
                       {"y0_init_min", s.y0_init_min},
                       {"y0_init_max", s.y0_init_max},
                       {"hidden_layers", s.hidden_layers},
                       {"hidden_width_offset", s.hidden_width_offset},
                       {"batch_norm", s.batch_norm}};
}

inline void from_json(const nlohmann::json& j, SolverSettings& s) {
    j.at("batch").get_to(s.batch);
    j.at("steps").get_to(s.steps);
    j.at("lr").get_to(s.lr);
    j.at("y0_init_min").get_to(s.y0_init_min);
    j.at("y0_init_max").get_to(s.y0_init_max);
    j.at("hidden_layers").get_to(s.hidden_layers);
    j.at("hidden_width_offset").get_to(s.hidden_width_offset);
    j.at("batch_norm").get_to(s.batch_norm);
}

inline nlohmann::json record_to_json(const UqRecord& r) {
    return nlohmann::json{{"i", r.index},   {"x", r.x},         {"y", r.y},
                          {"z", r.z},       {"ens_y", r.ens_y}, {"ens_z", r.ens_z},
                          {"seeds", r.seeds}, {"div", r.div}};
}

inline UqRecord record_from_json(const nlohmann::json& j) {
    UqRecord r;
    r.index = j.at("i").get<long>();
    r.x = j.at("x").get<std::vector<double>>();
    r.y = j.at("y").get<double>();
    r.z = j.at("z").get<std::vector<double>>();
    r.ens_y = j.at("ens_y").get<std::vector<double>>();
    r.ens_z = j.at("ens_z").get<std::vector<std::vector<double>>>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.div = j.at("div").get<std::vector<bool>>();
    return r;
}

namespace detail {

inline std::string meta_path(const std::string& records_path) { return records_path + ".meta.json"; }

inline UqRecord solve_record(const ParamSampler& sampler, const SampledParams& sp,
                             const SolverSettings& solver, int q_runs, std::uint64_t seed,
                             long index) {
    const BsdeProblem problem = make_problem(sampler, sp);
    const std::uint64_t record_seed =
        derive_seed(seed, seed_salt::kRecord, static_cast<std::uint64_t>(index));
    const DbsdeConfig cfg = solver.make_config(sp.grid, problem.d, record_seed);
    const auto runs = ensemble_solve(problem, cfg, q_runs, 1);
    UqRecord rec;
    rec.index = index;
    rec.x = sp.features;
    for (const auto& run : runs) {
        rec.ens_y.push_back(run.y0);
        rec.ens_z.push_back(run.z0);
        rec.seeds.push_back(run.seed);
        rec.div.push_back(run.diverged);
    }
    rec.y = rec.ens_y.front();
    rec.z = rec.ens_z.front();
    return rec;
}

} // namespace detail

// Generates (or resumes) a dataset. Records are appended to `out_path` in
// index order after each parallel block, so an interrupted run restarts from
// the last complete record and yields a byte-identical file. An empty
// `out_path` keeps the dataset in memory only.
inline UqDataset generate(const ParamSampler& sampler, long m, int q_runs,
                          const SolverSettings& solver, int workers, std::uint64_t seed,
                          const std::string& out_path = {}) {
    sampler.validate();
    if (m < 1 || q_runs < 1) throw std::invalid_argument("generate: need M >= 1 and Q >= 1");
    const auto samples = sample_params(sampler, m, derive_seed(seed, seed_salt::kParamDraw));
    const std::size_t total = samples.size();

    UqDataset ds;
    ds.problem_kind = sampler.family == ProblemFamily::BlackScholes ? "black_scholes" : "burgers";
    ds.meta = nlohmann::json{{"kind", ds.problem_kind}, {"sampler", sampler},
                             {"solver", solver},        {"M", m},
                             {"Q", q_runs},             {"seed", seed},
                             {"records", total}};

    std::size_t done = 0;
    if (!out_path.empty() && std::filesystem::exists(out_path)) {
        std::ifstream in(out_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) break; // truncated trailing write
            UqRecord rec = record_from_json(j);
            if (rec.index != static_cast<long>(ds.records.size())) break;
            ds.records.push_back(std::move(rec));
        }
        done = ds.records.size();
        if (done > total) throw std::runtime_error("generate: existing file larger than request");
    }
    if (!out_path.empty()) {
        std::ofstream meta(detail::meta_path(out_path));
        if (!meta) throw std::runtime_error("generate: cannot write meta for " + out_path);
        meta << ds.meta.dump(2) << "\n";
        // Rewrite the complete prefix so a truncated trailing line never leaks
        // into the resumed file.
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw std::runtime_error("generate: cannot write " + out_path);
        for (std::size_t i = 0; i < done; ++i) out << record_to_json(ds.records[i]).dump() << "\n";
    }

    ds.records.resize(total);
    const std::size_t block = static_cast<std::size_t>(std::max(workers, 1)) * 4;
    while (done < total) {
        const std::size_t end = std::min(total, done + block);
        parallel_for(end - done, workers, [&](std::size_t offset) {
            const std::size_t i = done + offset;
            ds.records[i] = detail::solve_record(sampler, samples[i], solver, q_runs, seed,
                                                 static_cast<long>(i));
        });
        if (!out_path.empty()) {
            std::ofstream out(out_path, std::ios::app);
            if (!out) throw std::runtime_error("generate: cannot append to " + out_path);
            for (std::size_t i = done; i < end; ++i)
                out << record_to_json(ds.records[i]).dump() << "\n";
            out.flush();
            if (!out) throw std::runtime_error("generate: write failed for " + out_path);
        }
        done = end;
    }
    return ds;
}

inline void save_dataset(const UqDataset& ds, const std::string& path) {
    {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw std::runtime_error("save_dataset: cannot write " + path);
        for (const auto& rec : ds.records) out << record_to_json(rec).dump() << "\n";
    }
    nlohmann::json meta = ds.meta;
    if (ds.has_split())
        meta["split"] = {{"train", ds.train_idx}, {"valid", ds.valid_idx}, {"test", ds.test_idx}};
    std::ofstream mout(detail::meta_path(path), std::ios::trunc);
    mout << meta.dump(2) << "\n";
}

inline UqDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dataset: cannot read " + path);
    UqDataset ds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ds.records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    std::ifstream min(detail::meta_path(path));
    if (min) {
        min >> ds.meta;
        ds.problem_kind = ds.meta.value("kind", std::string{});
        if (ds.meta.contains("split")) {
            ds.meta.at("split").at("train").get_to(ds.train_idx);
            ds.meta.at("split").at("valid").get_to(ds.valid_idx);
            ds.meta.at("split").at("test").get_to(ds.test_idx);
        }
    }
    return ds;
}

// Seeded permutation split into train / valid / test.
inline void split(UqDataset& ds, std::size_t m_valid, std::size_t m_test, std::uint64_t seed) {
    const std::size_t total = ds.records.size();
    if (m_valid + m_test >= total)
        throw std::invalid_argument("split: valid + test must leave a nonempty training set");
    std::vector<std::size_t> perm(total);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = total; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(perm[i - 1], perm[j]);
    }
    const std::size_t m_train = total - m_valid - m_test;
    ds.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m_train));
    ds.valid_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(m_train),
                        perm.begin() + static_cast<std::ptrdiff_t>(m_train + m_valid));
    ds.test_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(m_train + m_valid), perm.end());
}

// Group-aware split for N-grid datasets: every record of a parameter set
// (one block of |n_grid| consecutive records) lands in the same part, so
// per-set argmin studies see complete blocks. Counts are in groups.
inline void split_grouped(UqDataset& ds, std::size_t groups_valid, std::size_t groups_test,
                          std::uint64_t seed, std::size_t group_size) {
    if (group_size < 1 || ds.records.size() % group_size != 0)
        throw std::invalid_argument("split_grouped: records not divisible by group size");
    const std::size_t groups = ds.records.size() / group_size;
    if (groups_valid + groups_test >= groups)
        throw std::invalid_argument("split_grouped: too few groups left for training");
    std::vector<std::size_t> perm(groups);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = groups; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(perm[i - 1], perm[j]);
    }
    const auto expand = [&](std::size_t first, std::size_t count, std::vector<std::size_t>& out) {
        out.clear();
        for (std::size_t g = first; g < first + count; ++g)
            for (std::size_t k = 0; k < group_size; ++k)
                out.push_back(perm[g] * group_size + k);
    };
    expand(0, groups - groups_valid - groups_test, ds.train_idx);
    expand(groups - groups_valid - groups_test, groups_valid, ds.valid_idx);
    expand(groups - groups_test, groups_test, ds.test_idx);
}

// The divergence census: records whose first-run Y0 or any first-run Z0
// component is negative.
inline long count_negative_records(const UqDataset& ds) {
    long count = 0;
    for (const auto& rec : ds.records) {
        bool neg = rec.y < 0.0;
        for (double zk : rec.z) neg = neg || zk < 0.0;
        if (neg) ++count;
    }
    return count;
}

} // namespace bsdeuq
