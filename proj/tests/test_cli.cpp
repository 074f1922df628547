#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

// End-to-end checks of the command-line driver: exit codes, artifact layout,
// and byte-identical reproduction of data sections.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string cli = BSDEUQ_CLI_PATH;

int run_cli(const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

json tiny_solver(long steps) {
    return json{{"batch", 16},
                {"steps", steps},
                {"lr", {{"boundaries", {steps}}, {"rates", {0.01}}}},
                {"y0_init_min", 0.0},
                {"y0_init_max", 10.0},
                {"hidden_layers", 2},
                {"hidden_width_offset", 10},
                {"batch_norm", true}};
}

json tiny_problem() {
    return json{{"kind", "black_scholes"}, {"a", 0.05}, {"b", 0.2}, {"s0", 100.0},
                {"r", 0.03},               {"delta", 0.0}, {"k", 100.0}, {"t", 0.5}};
}

json tiny_sampler() {
    return json{{"family", "black_scholes"},
                {"policy", "fixed_N_fixed_T"},
                {"b_range", {{"lo", 0.1}, {"hi", 0.4}}},
                {"s0_range", {{"lo", 80.0}, {"hi", 120.0}}},
                {"r_range", {{"lo", 0.001}, {"hi", 0.1}}},
                {"t_range", {{"lo", 0.25}, {"hi", 0.25}}},
                {"a", 0.05},
                {"delta", 0.0},
                {"strike", 100.0},
                {"burgers_d", 1},
                {"n_fixed", 4},
                {"dt_fixed", 0.025},
                {"n_grid", json::array()}};
}

} // namespace

TEST_CASE("cli rejects missing flags and bad configs with usage errors") {
    CHECK(run_cli("solve") == 2);
    CHECK(run_cli("solve --config /nonexistent.json --out /tmp/x") == 2);
    CHECK(run_cli("definitely-not-a-command") != 0);

    const fs::path dir = fresh_dir("bsdeuq_cli_badcfg");
    write_json_file(dir / "bad.json", json{{"problem", {{"kind", "unknown"}}}});
    CHECK(run_cli("solve --config " + (dir / "bad.json").string() + " --out " + dir.string()) ==
          2);
    fs::remove_all(dir);
}

TEST_CASE("solve emits a report and is reproducible byte for byte") {
    const fs::path dir = fresh_dir("bsdeuq_cli_solve");
    json cfg;
    cfg["problem"] = tiny_problem();
    cfg["N"] = 4;
    cfg["solver"] = tiny_solver(30);
    write_json_file(dir / "cfg.json", cfg);

    const std::string base = "solve --config " + (dir / "cfg.json").string() + " --seed 5 --out ";
    REQUIRE(run_cli(base + (dir / "a").string()) == 0);
    REQUIRE(run_cli(base + (dir / "b").string()) == 0);

    CHECK(read_file(dir / "a" / "solve_report.json") == read_file(dir / "b" / "solve_report.json"));
    CHECK(read_file(dir / "a" / "loss_curve.dat") == read_file(dir / "b" / "loss_curve.dat"));

    const json report = json::parse(read_file(dir / "a" / "solve_report.json"));
    CHECK(report.contains("y0"));
    CHECK(report.contains("abs_err_y0"));
    CHECK(report.contains("config_hash"));
    CHECK(report["base_seed"] == 5);

    // The .dat header carries the hash and seed.
    const std::string dat = read_file(dir / "a" / "loss_curve.dat");
    CHECK(dat.find("# config_hash: ") != std::string::npos);
    CHECK(dat.find("# base_seed: 5") != std::string::npos);
    CHECK(dat.find("# columns: step loss") != std::string::npos);

    // An eval_paths request adds an eval-mode loss on fresh paths.
    json cfg_eval = cfg;
    cfg_eval["eval_paths"] = 64;
    write_json_file(dir / "cfg_eval.json", cfg_eval);
    REQUIRE(run_cli("solve --config " + (dir / "cfg_eval.json").string() + " --seed 5 --out " +
                    (dir / "c").string()) == 0);
    const json eval_report = json::parse(read_file(dir / "c" / "solve_report.json"));
    REQUIRE(eval_report.contains("eval_loss"));
    CHECK(eval_report["eval_loss"].get<double>() >= 0.0);
    fs::remove_all(dir);
}

TEST_CASE("gen produces identical datasets at any worker count") {
    const fs::path dir = fresh_dir("bsdeuq_cli_gen");
    json cfg;
    cfg["sampler"] = tiny_sampler();
    cfg["solver"] = tiny_solver(5);
    write_json_file(dir / "cfg.json", cfg);

    const std::string base = "gen --config " + (dir / "cfg.json").string() +
                             " --M 6 --Q 2 --seed 9 --valid 1 --test 1 --out ";
    REQUIRE(run_cli(base + (dir / "w1.jsonl").string() + " --workers 1") == 0);
    REQUIRE(run_cli(base + (dir / "w3.jsonl").string() + " --workers 3") == 0);
    CHECK(read_file(dir / "w1.jsonl") == read_file(dir / "w3.jsonl"));
    CHECK(read_file(dir / "w1.jsonl.meta.json") == read_file(dir / "w3.jsonl.meta.json"));
    fs::remove_all(dir);
}

TEST_CASE("train-uq and eval-uq run against a generated dataset") {
    const fs::path dir = fresh_dir("bsdeuq_cli_uq");
    json cfg;
    cfg["sampler"] = tiny_sampler();
    cfg["solver"] = tiny_solver(20);
    write_json_file(dir / "cfg.json", cfg);

    const std::string data = (dir / "ds.jsonl").string();
    REQUIRE(run_cli("gen --config " + (dir / "cfg.json").string() +
                    " --M 24 --Q 2 --seed 4 --valid 4 --test 6 --out " + data) == 0);

    REQUIRE(run_cli("train-uq --data " + data + " --target y --models 2 --width 16 --batch 8" +
                    " --lr-schedule 1e-2 --epochs-schedule 40 --seed 2 --out " +
                    (dir / "models").string()) == 0);
    REQUIRE(fs::exists(dir / "models" / "uq_y_model_0.json"));
    REQUIRE(fs::exists(dir / "models" / "uq_y_model_1.json"));
    REQUIRE(fs::exists(dir / "models" / "train_report_y.json"));

    const std::string eval_base =
        "eval-uq --data " + data + " --model " + (dir / "models" / "uq_y_model_0.json").string() +
        " --model " + (dir / "models" / "uq_y_model_1.json").string() + " --target y";
    REQUIRE(run_cli(eval_base + " --split test --out " + (dir / "eval").string()) == 0);
    CHECK(fs::exists(dir / "eval" / "summary_y_test.json"));
    CHECK(fs::exists(dir / "eval" / "q_equivalence_y_test.dat"));
    CHECK(fs::exists(dir / "eval" / "per_dt_y_test.dat"));

    // Evaluating the train split writes distinct files, never mixed.
    REQUIRE(run_cli(eval_base + " --split train --out " + (dir / "eval").string()) == 0);
    CHECK(fs::exists(dir / "eval" / "summary_y_train.json"));

    const json summary = json::parse(read_file(dir / "eval" / "summary_y_test.json"));
    CHECK(summary.contains("corr_rel_rmse_vs_rel_ens_std"));
    CHECK(summary.contains("mean_corr_rel_rmse_vs_rel_est_std"));
    CHECK(summary.contains("rmse_truth_vs_ens_mean"));
    CHECK(summary.contains("mean_rmse_truth_vs_est_mean"));
    CHECK(summary.contains("spearman_rel_rmse_vs_rel_ens_std"));
    CHECK(summary["samples"] == 6);

    // eval-uq re-runs reproduce the data sections byte for byte.
    REQUIRE(run_cli(eval_base + " --split test --out " + (dir / "eval2").string()) == 0);
    CHECK(read_file(dir / "eval" / "summary_y_test.json") ==
          read_file(dir / "eval2" / "summary_y_test.json"));
    CHECK(read_file(dir / "eval" / "q_equivalence_y_test.dat") ==
          read_file(dir / "eval2" / "q_equivalence_y_test.dat"));

    // The training-size study emits a curve with one row per fraction.
    REQUIRE(run_cli(eval_base + " --split test --train-size 0.5,1.0 --train-size-models 2" +
                    " --width 16 --batch 8 --lr-schedule 1e-2 --epochs-schedule 20 --seed 6" +
                    " --out " + (dir / "ts").string()) == 0);
    REQUIRE(fs::exists(dir / "ts" / "training_size_y_test.dat"));
    {
        std::ifstream ts(dir / "ts" / "training_size_y_test.dat");
        std::string line;
        int rows = 0;
        while (std::getline(ts, line))
            if (!line.empty() && line[0] != '#') ++rows;
        CHECK(rows == 2);
    }

    // Z-target models train on the same dataset.
    REQUIRE(run_cli("train-uq --data " + data + " --target z --models 1 --width 16 --batch 8" +
                    " --lr-schedule 1e-2 --epochs-schedule 20 --seed 3 --out " +
                    (dir / "models").string()) == 0);
    REQUIRE(run_cli("eval-uq --data " + data + " --model " +
                    (dir / "models" / "uq_z_model_0.json").string() +
                    " --target z --component 0 --split test --out " + (dir / "evalz").string()) ==
            0);
    CHECK(fs::exists(dir / "evalz" / "summary_z_test.json"));
    fs::remove_all(dir);
}

TEST_CASE("n-grid datasets flow through gen, train-uq, and eval-uq") {
    const fs::path dir = fresh_dir("bsdeuq_cli_ngrid");
    json cfg;
    json sampler = tiny_sampler();
    sampler["family"] = "burgers";
    sampler["policy"] = "fixed_T_vary_N_grid";
    sampler["t_range"] = {{"lo", 0.3}, {"hi", 0.3}};
    sampler["b_range"] = {{"lo", 0.5}, {"hi", 4.0}};
    sampler["burgers_d"] = 1;
    sampler["n_grid"] = {2, 4, 8};
    cfg["sampler"] = sampler;
    json solver = tiny_solver(40);
    solver["y0_init_min"] = 0.0;
    solver["y0_init_max"] = 1.0;
    cfg["solver"] = solver;
    write_json_file(dir / "cfg.json", cfg);

    const std::string data = (dir / "ds.jsonl").string();
    // 12 parameter sets expand to 36 records; valid/test counted in sets.
    REQUIRE(run_cli("gen --config " + (dir / "cfg.json").string() +
                    " --M 12 --Q 2 --seed 6 --valid 2 --test 3 --out " + data) == 0);
    const json meta = json::parse(read_file(data + ".meta.json"));
    CHECK(meta["records"] == 36);
    CHECK(meta["split"]["test"].size() == 9); // 3 sets x 3 grid entries

    REQUIRE(run_cli("train-uq --data " + data + " --target y --models 1 --width 16 --batch 8" +
                    " --lr-schedule 1e-2 --epochs-schedule 30 --seed 2 --out " +
                    (dir / "models").string()) == 0);
    REQUIRE(run_cli("eval-uq --data " + data + " --model " +
                    (dir / "models" / "uq_y_model_0.json").string() +
                    " --target y --split test --out " + (dir / "eval").string()) == 0);
    const json summary = json::parse(read_file(dir / "eval" / "summary_y_test.json"));
    REQUIRE(summary.contains("n_grid"));
    CHECK(summary["n_grid"]["groups"] == 3);
    CHECK(summary["n_grid"]["grid"] == json({2, 4, 8}));
    const double acc = summary["n_grid"]["accuracy_model"];
    const double mrr_val = summary["n_grid"]["mrr_model"];
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(mrr_val >= acc); // reciprocal rank dominates the exact-match rate
    fs::remove_all(dir);
}

TEST_CASE("scheme comparison labels two datasets over shared parameters") {
    const fs::path dir = fresh_dir("bsdeuq_cli_compare");
    json cfg;
    cfg["sampler"] = tiny_sampler();
    cfg["solver"] = tiny_solver(25);
    write_json_file(dir / "a.json", cfg);
    json cfg_b = cfg;
    cfg_b["solver"]["steps"] = 60; // a longer-budget variant of the same scheme
    cfg_b["solver"]["lr"] = {{"boundaries", {60}}, {"rates", {0.01}}};
    write_json_file(dir / "b.json", cfg_b);

    const std::string data_a = (dir / "a.jsonl").string();
    const std::string data_b = (dir / "b.jsonl").string();
    // The same --seed gives both datasets identical parameter draws.
    REQUIRE(run_cli("gen --config " + (dir / "a.json").string() +
                    " --M 16 --Q 2 --seed 4 --valid 3 --test 4 --out " + data_a) == 0);
    REQUIRE(run_cli("gen --config " + (dir / "b.json").string() +
                    " --M 16 --Q 2 --seed 4 --valid 3 --test 4 --out " + data_b) == 0);

    for (const auto& [data, tag] : {std::pair{data_a, "ma"}, std::pair{data_b, "mb"}})
        REQUIRE(run_cli("train-uq --data " + data + " --target y --models 1 --width 16" +
                        " --batch 8 --lr-schedule 1e-2 --epochs-schedule 30 --seed 2 --out " +
                        (dir / tag).string()) == 0);

    REQUIRE(run_cli("eval-uq --data " + data_a + " --model " +
                    (dir / "ma" / "uq_y_model_0.json").string() + " --target y --split test" +
                    " --compare " + data_b + " --compare-model " +
                    (dir / "mb" / "uq_y_model_0.json").string() + " --out " +
                    (dir / "eval").string()) == 0);
    const json summary = json::parse(read_file(dir / "eval" / "summary_y_test.json"));
    REQUIRE(summary.contains("scheme_comparison"));
    CHECK(summary["scheme_comparison"]["samples"] == 4);
    const double acc = summary["scheme_comparison"]["accuracy_ens"];
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    fs::remove_all(dir);
}

TEST_CASE("error-study emits sweep curves with checkpoints") {
    const fs::path dir = fresh_dir("bsdeuq_cli_study");
    json cfg;
    cfg["problem"] = tiny_problem();
    cfg["N"] = 4;
    cfg["solver"] = tiny_solver(30);
    cfg["study"] = {{"axis", "N"}, {"values", {2, 4}}, {"checkpoints", {10, 20, 30}}, {"Q", 2}};
    write_json_file(dir / "cfg.json", cfg);

    REQUIRE(run_cli("error-study --config " + (dir / "cfg.json").string() + " --seed 3 --out " +
                    (dir / "out").string()) == 0);
    for (const char* name : {"rmse_y0.dat", "rmse_z0.dat", "abs_err_y0_N=2.dat",
                             "abs_err_z0_N=4.dat", "study_report.json"})
        CHECK(fs::exists(dir / "out" / name));

    std::ifstream dat(dir / "out" / "rmse_y0.dat");
    std::string line;
    std::getline(dat, line); // config hash
    std::getline(dat, line); // base seed
    std::getline(dat, line);
    CHECK(line == "# columns: step N=2 N=4");
    int rows = 0;
    while (std::getline(dat, line))
        if (!line.empty() && line[0] != '#') ++rows;
    CHECK(rows == 3);

    // Q = 1: the absolute-error column equals the RMSE column.
    json cfg1 = cfg;
    cfg1["study"]["Q"] = 1;
    cfg1["study"]["values"] = {4};
    write_json_file(dir / "cfg1.json", cfg1);
    REQUIRE(run_cli("error-study --config " + (dir / "cfg1.json").string() + " --seed 3 --out " +
                    (dir / "q1").string()) == 0);
    std::ifstream q1(dir / "q1" / "abs_err_y0_N=4.dat");
    while (std::getline(q1, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        double step, rmse, run1;
        row >> step >> rmse >> run1;
        CHECK(rmse == run1);
    }
    fs::remove_all(dir);
}

TEST_CASE("normality command reports p-values and histogram data") {
    const fs::path dir = fresh_dir("bsdeuq_cli_norm");
    json cfg;
    cfg["problem"] = tiny_problem();
    cfg["N"] = 2;
    cfg["solver"] = tiny_solver(25);
    cfg["Q"] = 24;
    cfg["bins"] = 6;
    write_json_file(dir / "cfg.json", cfg);

    REQUIRE(run_cli("normality --config " + (dir / "cfg.json").string() + " --seed 8 --out " +
                    (dir / "out").string()) == 0);
    const json report = json::parse(read_file(dir / "out" / "normality_report.json"));
    CHECK(report.at("y0").contains("p_value"));
    CHECK(report.at("z0").contains("p_value"));
    CHECK(fs::exists(dir / "out" / "hist_y0.dat"));
    CHECK(fs::exists(dir / "out" / "fit_y0.dat"));

    // Histogram area is one.
    std::ifstream hist(dir / "out" / "hist_y0.dat");
    std::string line;
    double area = 0.0;
    while (std::getline(hist, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        double lo, hi, density;
        row >> lo >> hi >> density;
        area += (hi - lo) * density;
    }
    CHECK(area == Catch::Approx(1.0).margin(1e-9));
    fs::remove_all(dir);
}
