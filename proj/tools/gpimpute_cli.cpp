/*
 * Copyright 2026 The gpimpute Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gpimpute/analysis.hpp"
#include "gpimpute/config.hpp"
#include "gpimpute/diffusion_sampler.hpp"
#include "gpimpute/gp_model.hpp"
#include "gpimpute/impute_uq.hpp"
#include "gpimpute/masking.hpp"
#include "gpimpute/nested_gd.hpp"
#include "gpimpute/rng.hpp"
#include "gpimpute/score_exact.hpp"
#include "gpimpute/score_train.hpp"
#include "gpimpute/unrolled_transformer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gpimpute;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kBadConfig = 2, kUnreadable = 3, kInfeasible = 4, kNumerical = 5 };

struct UnreadableConfig : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

std::string quote(const std::string& f) {
    if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
    std::string out = "\"";
    for (char c : f) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::string& hash, std::uint64_t seed, const std::vector<std::string>& cols)
        : os_(path), path_(path) {
        if (!os_) throw std::runtime_error("cannot write " + path.string());
        os_ << "# config_hash=" << hash << " seed=" << seed << "\r\n";
        row(cols);
    }
    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) os_ << (i ? "," : "") << quote(fields[i]);
        os_ << "\r\n";
    }
    const fs::path& path() const { return path_; }

private:
    std::ofstream os_;
    fs::path path_;
};

json default_config() {
    return json::parse(R"({
        "gp": {"H": 24, "d": 1, "kernel": {"kind": "laplace", "lengthscale": 8.0}},
        "patterns": ["P1", "P2", "P3", "P4"],
        "strategies": ["S1", "S2", "S3", "S4"],
        "n_grid": [1000],
        "H_grid": [],
        "seeds": [0],
        "trials": 200,
        "Z": 200,
        "alpha": 0.05,
        "draws": 50,
        "risk_mc": 1000,
        "sampler": {},
        "train": {}
    })");
}

struct Options {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    std::string out = "out";
    std::optional<int> n, H, Z, trials;
    std::optional<std::string> pattern, strategy;
    std::optional<double> alpha;
    bool exact_score = false;
    bool latent = false;
};

struct Experiment {
    json cfg;
    std::uint64_t seed = 0;
    int threads = 1;
    fs::path out;
    std::string hash;
    std::vector<int> H_values;

    GpSpec gp_at(int H) const {
        json g = cfg.at("gp");
        g["H"] = H;
        return gp_spec_from_json(g, "gp");
    }
    CsvWriter csv(const std::string& name, const std::vector<std::string>& cols) const {
        return CsvWriter(out / name, hash, seed, cols);
    }
    template <typename T>
    T get(const std::string& key) const {
        return get_req<T>(cfg, key, "");
    }
};

Experiment load(const Options& o) {
    json cfg = default_config();
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw UnreadableConfig("cannot read config '" + o.config + "'");
        json user;
        try {
            user = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("<root>", std::string("parse error: ") + e.what());
        }
        if (!user.is_object()) throw ConfigError("<root>", "expected an object");
        for (auto& [k, v] : user.items()) cfg[k] = v;
    }
    if (o.seed_set) cfg["seed"] = o.seed;
    if (o.n) cfg["n_grid"] = json::array({*o.n});
    if (o.H) {
        cfg["gp"]["H"] = *o.H;
        cfg["H_grid"] = json::array({*o.H});
    }
    if (o.pattern) cfg["patterns"] = json::array({*o.pattern});
    if (o.strategy) cfg["strategies"] = json::array({*o.strategy});
    if (o.alpha) cfg["alpha"] = *o.alpha;
    if (o.Z) cfg["Z"] = *o.Z;
    if (o.trials) cfg["trials"] = *o.trials;

    Experiment e;
    e.cfg = cfg;
    e.seed = get_opt<std::uint64_t>(cfg, "seed", "", 0);
    e.threads = std::max(1, o.threads);
    e.out = o.out;
    e.hash = hex(fnv1a(cfg.dump()));
    // validates the gp block once up front
    GpSpec base = gp_spec_from_json(require(cfg, "gp", ""), "gp");
    e.H_values = get_opt<std::vector<int>>(cfg, "H_grid", "", {});
    if (e.H_values.empty()) e.H_values.push_back(base.H);
    for (int H : e.H_values)
        if (H < 2) throw ConfigError("H_grid", "entries must be >= 2");
    double a = e.get<double>("alpha");
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("alpha", "must lie in (0, 1)");
    fs::create_directories(e.out);
    return e;
}

std::vector<std::pair<std::string, BlockStrategy>> patterns_at(const Experiment& e, int H) {
    const json& arr = require(e.cfg, "patterns", "");
    if (!arr.is_array()) throw ConfigError("patterns", "expected an array");
    auto builtin = builtin_patterns(H);
    std::vector<std::pair<std::string, BlockStrategy>> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "patterns[" + std::to_string(i) + "]";
        if (arr[i].is_string()) {
            auto name = arr[i].get<std::string>();
            auto it = std::find_if(builtin.begin(), builtin.end(), [&](const auto& b) { return b.first == name; });
            if (it == builtin.end()) throw ConfigError(p, "unknown pattern '" + name + "'");
            out.push_back(*it);
        } else {
            auto name = get_req<std::string>(arr[i], "name", p);
            out.emplace_back(name, block_strategy_from_json(arr[i], p));
        }
        out.back().second.validate(H);
    }
    return out;
}

std::vector<std::pair<std::string, MixedStrategy>> strategies_at(const Experiment& e, int H) {
    const json& arr = require(e.cfg, "strategies", "");
    if (!arr.is_array()) throw ConfigError("strategies", "expected an array");
    auto builtin = builtin_strategies(H);
    std::vector<std::pair<std::string, MixedStrategy>> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "strategies[" + std::to_string(i) + "]";
        if (arr[i].is_string()) {
            auto name = arr[i].get<std::string>();
            auto it = builtin.find(name);
            if (it == builtin.end()) throw ConfigError(p, "unknown strategy '" + name + "'");
            out.emplace_back(name, it->second);
        } else {
            auto name = get_req<std::string>(arr[i], "name", p);
            out.emplace_back(name, mixed_strategy_from_json(require(arr[i], "components", p), join_key(p, "components")));
        }
        out.back().second.validate(H);
    }
    return out;
}

SamplerConfig sampler_of(const Experiment& e) { return sampler_config_from_json(e.cfg.at("sampler"), "sampler"); }
TrainConfig train_of(const Experiment& e) { return train_config_from_json(e.cfg.at("train"), "train"); }

EvalConfig eval_of(const Experiment& e, std::uint64_t seed) {
    EvalConfig c;
    c.trials = e.get<int>("trials");
    c.Z = e.get<int>("Z");
    c.alpha = e.get<double>("alpha");
    c.sampler = sampler_of(e);
    c.seed = seed;
    c.threads = e.threads;
    if (c.trials < 1) throw ConfigError("trials", "must be >= 1");
    if (c.Z < 20) throw ConfigError("Z", "must be >= 20");
    return c;
}

std::uint64_t job_seed(const Experiment& e, const std::string& tag, long n, int H, std::uint64_t rep) {
    return mix_seed(mix_seed(e.seed, fnv1a(tag + "/" + std::to_string(n) + "/" + std::to_string(H))), rep);
}

std::optional<double> latent_noise(const Experiment& e) {
    if (!e.cfg.contains("latent")) return std::nullopt;
    return get_opt<double>(e.cfg.at("latent"), "noise_var", "latent", 0.1);
}

ScoreModel train_model(const Experiment& e, const GpSpec& gp, const MixedStrategy& s, int n, std::uint64_t seed) {
    TrainConfig tc = train_of(e);
    tc.seed = mix_seed(seed, 2);
    MatrixXd X = sample_sequences(gp, n, mix_seed(seed, 0));
    if (auto nv = latent_noise(e)) X = latent_transform(X, *nv, mix_seed(seed, 3));
    ScoreModel m = fit(make_training_set(X, gp.H, gp.d, s, mix_seed(seed, 1)), gp.H, gp.d, tc);
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
    return m;
}

int cmd_gen(const Experiment& e, const Options& o) {
    const GpSpec gp = e.gp_at(e.H_values.front());
    const int n = e.get<std::vector<int>>("n_grid").at(0);
    MatrixXd X = sample_sequences(gp, n, mix_seed(e.seed, 0));
    if (o.latent) X = latent_transform(X, latent_noise(e).value_or(0.1), mix_seed(e.seed, 1));
    std::vector<std::string> cols{"index"};
    for (int i = 0; i < gp.H; ++i)
        for (int c = 0; c < gp.d; ++c) cols.push_back("x" + std::to_string(i) + "_" + std::to_string(c));
    auto w = e.csv("gen.csv", cols);
    for (int s = 0; s < n; ++s) {
        std::vector<std::string> row{std::to_string(s)};
        for (Eigen::Index k = 0; k < X.rows(); ++k) row.push_back(num(X(k, s)));
        w.row(row);
    }
    std::cout << w.path().string() << "\n";
    return kOk;
}

int cmd_condnum(const Experiment& e) {
    auto w = e.csv("condnum.csv", {"H", "pattern", "draws", "kappa_cond", "kappa_obs", "lambda_min_cond"});
    for (int H : e.H_values) {
        GpSpec gp = e.gp_at(H);
        for (const auto& r : pattern_report(gp, patterns_at(e, H), e.get<int>("draws"), mix_seed(e.seed, H))) {
            w.row({std::to_string(H), r.name, std::to_string(r.draws), num(r.kappa_cond), num(r.kappa_obs),
                   num(r.lambda_min_cond)});
            std::cout << "H=" << H << " " << r.name << " kappa_cond=" << num(r.kappa_cond) << "\n";
        }
    }
    return kOk;
}

int cmd_unroll(const Experiment& e) {
    const json u = e.cfg.value("unroll", json::object());
    const GpSpec gp = e.gp_at(e.H_values.front());
    auto missing = get_req<std::vector<int>>(u, "missing", "unroll");
    Mask mask = Mask::from_missing(gp.H, missing);
    DiffusionSchedule sch;
    sch.t0 = get_opt<double>(u, "t0", "unroll", sch.t0);
    sch.T = get_opt<double>(u, "T", "unroll", sch.T);
    auto eps_list = get_opt<std::vector<double>>(u, "eps", "unroll", {1e-1, 1e-2});
    const int nq = get_opt<int>(u, "queries", "unroll", 100);
    auto cond = std::make_shared<ConditionalGaussian>(gp, mask);
    ExactScore es(cond, sch);
    auto qs = draw_truncated_queries(gp, mask, sch, nq, mix_seed(e.seed, 1));

    auto lw = e.csv("unroll_gd.csv", {"eps", "query", "t", "K", "K_aux", "error", "bound", "within"});
    int bad = 0;
    for (double eps : eps_list)
        for (std::size_t i = 0; i < qs.size(); ++i) {
            auto cfg = recommend_iterations(*cond, sch, qs[i].t, eps);
            double err = (nested_gd_score(*cond, qs[i], cfg).s - es(qs[i])).norm();
            double bound = eps / DiffusionSchedule::sigma(qs[i].t);
            bad += err > bound;
            lw.row({num(eps), std::to_string(i), num(qs[i].t), std::to_string(cfg.K), std::to_string(cfg.K_aux),
                    num(err), num(bound), err <= bound ? "1" : "0"});
        }
    std::cout << "nested GD: " << bad << " queries above the bound\n";

    if (gp.embedding.kind != EmbeddingSpec::Kind::sinusoidal) {
        std::cout << "network check skipped: needs a sinusoidal embedding\n";
        return kOk;
    }
    const double net_eps = get_opt<double>(u, "network_eps", "unroll", eps_list.front());
    const int net_q = std::min<int>(get_opt<int>(u, "network_queries", "unroll", 5), static_cast<int>(qs.size()));
    auto nw = e.csv("unroll_network.csv", {"mode", "query", "t", "max_step_dev", "error_to_exact", "bound"});
    json meta;
    for (MultMode mode : {MultMode::idealized, MultMode::relu}) {
        UnrolledBuildOptions bo;
        bo.mode = mode;
        auto net = build_unrolled_transformer(gp, mask, sch, net_eps, bo);
        const std::string name = mode == MultMode::idealized ? "idealized" : "relu";
        meta[name] = net.metadata();
        auto ideal = build_unrolled_transformer(gp, mask, sch, net_eps / 2);
        for (int i = 0; i < net_q; ++i) {
            const auto& q = qs[static_cast<std::size_t>(i)];
            double dev, bound;
            VectorXd out;
            if (mode == MultMode::idealized) {
                auto rep = bisimulate(net, q);
                dev = rep.max_dev;
                out = rep.output;
                bound = net_eps / DiffusionSchedule::sigma(q.t);
            } else {
                out = net.forward(q);
                dev = (out - ideal.forward(q)).norm();
                bound = net.relu_ledger(q.t);
            }
            nw.row({name, std::to_string(i), num(q.t), num(dev), num((out - es(q)).norm()), num(bound)});
        }
    }
    std::ofstream(e.out / "unroll_network.json") << meta.dump(2) << "\n";
    std::cout << "network tables written\n";
    return kOk;
}

int cmd_train(const Experiment& e) {
    auto w = e.csv("train.csv", {"strategy", "n", "H", "replicate", "risk", "stderr"});
    fs::create_directories(e.out / "models");
    const auto reps = e.get<std::vector<std::uint64_t>>("seeds");
    const int n_mc = e.get<int>("risk_mc");
    for (int H : e.H_values) {
        GpSpec gp = e.gp_at(H);
        for (const auto& [sname, strat] : strategies_at(e, H))
            for (int n : e.get<std::vector<int>>("n_grid"))
                for (auto rep : reps) {
                    auto seed = job_seed(e, sname, n, H, rep);
                    ScoreModel m = train_model(e, gp, strat, n, seed);
                    std::ofstream(e.out / "models" /
                                  (sname + "_H" + std::to_string(H) + "_n" + std::to_string(n) + "_r" +
                                   std::to_string(rep) + ".json"))
                        << m.to_json().dump() << "\n";
                    std::string risk = "", se = "";
                    if (!latent_noise(e)) {
                        auto r = score_risk(m, gp, strat, train_of(e).schedule, n_mc, mix_seed(seed, 9));
                        risk = num(r.risk);
                        se = num(r.stderr_);
                    }
                    w.row({sname, std::to_string(n), std::to_string(H), std::to_string(rep), risk, se});
                    std::cout << sname << " n=" << n << " H=" << H << " rep=" << rep << " risk=" << risk << "\n";
                }
    }
    return kOk;
}

struct Metric {
    double value, stderr_;
};

template <typename Eval>
int evaluate(const Experiment& e, const Options& o, const std::string& file, const std::string& metric, Eval eval) {
    auto w = e.csv(file, {"pattern", "strategy", "n", "H", "metric", "value", "stderr"});
    const auto reps = e.get<std::vector<std::uint64_t>>("seeds");
    for (int H : e.H_values) {
        GpSpec gp = e.gp_at(H);
        auto pats = patterns_at(e, H);
        if (o.exact_score) {
            if (latent_noise(e)) throw ConfigError("latent", "exact score is unavailable for latent data");
            ExactScoreFn exact(gp, sampler_of(e).schedule);
            for (const auto& [pname, blk] : pats) {
                Metric m = eval(exact, gp, as_mixed(blk), eval_of(e, job_seed(e, pname, 0, H, 0)));
                w.row({pname, "exact", "", std::to_string(H), metric, num(m.value), num(m.stderr_)});
                std::cout << pname << " exact H=" << H << " " << metric << "=" << num(m.value) << "\n";
            }
            continue;
        }
        for (const auto& [sname, strat] : strategies_at(e, H))
            for (int n : e.get<std::vector<int>>("n_grid")) {
                std::vector<std::vector<Metric>> per(pats.size());
                for (auto rep : reps) {
                    ScoreModel model = train_model(e, gp, strat, n, job_seed(e, sname, n, H, rep));
                    for (std::size_t p = 0; p < pats.size(); ++p)
                        per[p].push_back(eval(model, gp, as_mixed(pats[p].second),
                                              eval_of(e, job_seed(e, pats[p].first, n, H, 1000 + rep))));
                }
                for (std::size_t p = 0; p < pats.size(); ++p) {
                    double v = 0, se2 = 0;
                    for (const auto& m : per[p]) {
                        v += m.value;
                        se2 += m.stderr_ * m.stderr_;
                    }
                    const double R = static_cast<double>(per[p].size());
                    w.row({pats[p].first, sname, std::to_string(n), std::to_string(H), metric, num(v / R),
                           num(std::sqrt(se2) / R)});
                    std::cout << pats[p].first << " " << sname << " n=" << n << " H=" << H << " " << metric << "="
                              << num(v / R) << "\n";
                }
            }
    }
    return kOk;
}

int cmd_coverage(const Experiment& e, const Options& o) {
    if (latent_noise(e)) throw ConfigError("latent", "coverage needs the exact conditional; use mse for latent data");
    return evaluate(e, o, "coverage.csv", "coverage",
                    [](const ScoreFn& s, const GpSpec& gp, const MixedStrategy& p, const EvalConfig& c) {
                        auto r = coverage_eval(s, gp, p, c);
                        return Metric{r.coverage, r.stderr_};
                    });
}

int cmd_mse(const Experiment& e, const Options& o) {
    auto nv = latent_noise(e);
    return evaluate(e, o, "mse.csv", "mse",
                    [nv](const ScoreFn& s, const GpSpec& gp, const MixedStrategy& p, const EvalConfig& c) {
                        auto r = nv ? mse_eval_latent(s, gp, *nv, p, c) : mse_eval(s, gp, p, c);
                        return Metric{r.mse, r.stderr_};
                    });
}

int cmd_ds(const Experiment& e) {
    if (latent_noise(e)) throw ConfigError("latent", "ds needs the exact conditional");
    const json dj = e.cfg.value("ds", json::object());
    DsConfig dc;
    dc.n_ref = get_opt<int>(dj, "n_ref", "ds", dc.n_ref);
    dc.n_inner = get_opt<int>(dj, "n_inner", "ds", dc.n_inner);
    const int points = get_opt<int>(dj, "points", "ds", 50);
    auto loss = get_opt<std::string>(dj, "loss", "ds", "denoising");
    if (loss == "denoising")
        dc.loss = DsLoss::denoising;
    else if (loss == "score_error")
        dc.loss = DsLoss::score_error;
    else
        throw ConfigError("ds.loss", "unknown loss '" + loss + "'");
    auto w = e.csv("ds.csv", {"pattern", "reference", "n", "H", "metric", "value", "stderr"});
    const int n = e.get<std::vector<int>>("n_grid").at(0);
    for (int H : e.H_values) {
        GpSpec gp = e.gp_at(H);
        dc.schedule = train_of(e).schedule;
        auto strats = strategies_at(e, H);
        std::vector<std::unique_ptr<ScoreModel>> models;
        for (const auto& [sname, strat] : strats)
            models.push_back(std::make_unique<ScoreModel>(train_model(e, gp, strat, n, job_seed(e, sname, n, H, 0))));
        ExactScoreFn exact(gp, dc.schedule);
        std::vector<const ScoreFn*> cands{&exact};
        for (const auto& m : models) cands.push_back(m.get());
        for (const auto& [pname, blk] : patterns_at(e, H)) {
            auto pts = draw_test_points(gp, as_mixed(blk), points, job_seed(e, pname, n, H, 7));
            for (const auto& [rname, ref] : strats) {
                dc.seed = job_seed(e, pname + "|" + rname, n, H, 8);
                auto est = ds_estimate(gp, ref, pts, cands, dc);
                double sd = std::sqrt((est.point_ds.array() - est.ds).square().sum() / std::max(1, points - 1));
                w.row({pname, rname, std::to_string(n), std::to_string(H), "ds", num(est.ds),
                       num(sd / std::sqrt(double(points)))});
                std::cout << pname << " ref=" << rname << " H=" << H << " DS=" << num(est.ds) << "\n";
            }
        }
    }
    return kOk;
}

json parse_csv_field(const std::string& f) {
    if (f.empty()) return nullptr;
    char* end = nullptr;
    double v = std::strtod(f.c_str(), &end);
    if (end && *end == '\0') return v;
    return f;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool q = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (q) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                q = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            q = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

int cmd_report(const Experiment& e) {
    json rep;
    rep["config_hash"] = e.hash;
    rep["seed"] = e.seed;
    rep["config"] = e.cfg;
    rep["tables"] = json::object();
    std::vector<fs::path> files;
    for (const auto& ent : fs::directory_iterator(e.out))
        if (ent.path().extension() == ".csv") files.push_back(ent.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        std::string line, header_comment;
        std::getline(in, header_comment);
        std::getline(in, line);
        auto cols = split_csv(line);
        json rows = json::array();
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            auto fields = split_csv(line);
            json r;
            for (std::size_t i = 0; i < cols.size() && i < fields.size(); ++i) r[cols[i]] = parse_csv_field(fields[i]);
            rows.push_back(r);
        }
        if (!header_comment.empty() && header_comment.back() == '\r') header_comment.pop_back();
        rep["tables"][f.filename().string()] = {{"header", header_comment}, {"rows", rows}};
    }
    std::ofstream(e.out / "report.json") << rep.dump(2) << "\n";
    std::cout << (e.out / "report.json").string() << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gpimpute: diffusion imputation lab for Gaussian-process sequences"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sc) {
        sc->add_option("--config", o.config, "JSON experiment config");
        sc->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) {
            o.seed = s;
            o.seed_set = true;
        }, "master seed");
        sc->add_option("--threads", o.threads, "worker threads for trial loops");
        sc->add_option("--out", o.out, "output directory");
        sc->add_option_function<int>("--n", [&](const int& v) { o.n = v; }, "training size override");
        sc->add_option_function<int>("--H", [&](const int& v) { o.H = v; }, "sequence length override");
        sc->add_option_function<std::string>("--pattern", [&](const std::string& v) { o.pattern = v; }, "pattern override");
        sc->add_option_function<std::string>("--strategy", [&](const std::string& v) { o.strategy = v; }, "strategy override");
        sc->add_option_function<double>("--alpha", [&](const double& v) { o.alpha = v; }, "miscoverage level");
        sc->add_option_function<int>("--Z", [&](const int& v) { o.Z = v; }, "samples per imputation");
        sc->add_option_function<int>("--trials", [&](const int& v) { o.trials = v; }, "evaluation trials");
    };
    std::map<std::string, CLI::App*> subs;
    for (const char* name : {"gen", "condnum", "unroll-verify", "train", "coverage", "mse", "ds", "report"}) {
        subs[name] = app.add_subcommand(name);
        add_common(subs[name]);
    }
    subs["gen"]->description("sample sequences to CSV");
    subs["gen"]->add_flag("--latent", o.latent, "apply the latent transform");
    subs["condnum"]->description("condition numbers per pattern");
    subs["unroll-verify"]->description("nested GD and unrolled network error tables");
    subs["train"]->description("fit score models over the n grid and report risk");
    subs["coverage"]->description("confidence-region coverage per pattern and strategy");
    subs["coverage"]->add_flag("--exact-score", o.exact_score, "impute with the exact score");
    subs["mse"]->description("point-estimate MSE per pattern and strategy");
    subs["mse"]->add_flag("--exact-score", o.exact_score, "impute with the exact score");
    subs["ds"]->description("distribution-shift coefficients");
    subs["report"]->description("aggregate the CSV tables in --out into report.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        Experiment e = load(o);
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "gen") return cmd_gen(e, o);
        if (cmd == "condnum") return cmd_condnum(e);
        if (cmd == "unroll-verify") return cmd_unroll(e);
        if (cmd == "train") return cmd_train(e);
        if (cmd == "coverage") return cmd_coverage(e, o);
        if (cmd == "mse") return cmd_mse(e, o);
        if (cmd == "ds") return cmd_ds(e);
        if (cmd == "report") return cmd_report(e);
        std::cerr << "error: unknown subcommand " << cmd << "\n";
        return kUsage;
    } catch (const UnreadableConfig& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return kUnreadable;
    } catch (const ConfigError& ex) {
        std::cerr << "error: config " << ex.what() << "\n";
        return kBadConfig;
    } catch (const StrategyError& ex) {
        std::cerr << "error: infeasible strategy: " << ex.what() << "\n";
        return kInfeasible;
    } catch (const std::invalid_argument& ex) {
        std::cerr << "error: invalid setting: " << ex.what() << "\n";
        return kBadConfig;
    } catch (const std::exception& ex) {
        std::cerr << "error: numerical failure: " << ex.what() << "\n";
        return kNumerical;
    }
}
