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
#include "gpimpute/masking.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "gpimpute/config.hpp"
#include "gpimpute/rng.hpp"

namespace gpimpute {

Mask::Mask(std::vector<std::uint8_t> tau) : tau_(std::move(tau)) {
    for (int i = 0; i < H(); ++i) (tau_[static_cast<std::size_t>(i)] ? obs_ : miss_).push_back(i);
    if (miss_.empty() || obs_.empty()) throw std::invalid_argument("degenerate mask");
}

Mask Mask::from_missing(int H, const std::vector<int>& missing) {
    std::vector<std::uint8_t> tau(static_cast<std::size_t>(H), 1);
    for (int i : missing) {
        if (i < 0 || i >= H) throw std::out_of_range("missing index out of range");
        tau[static_cast<std::size_t>(i)] = 0;
    }
    return Mask(std::move(tau));
}

std::vector<int> Mask::missing_runs() const {
    std::vector<int> runs;
    int cur = 0;
    for (auto t : tau_) {
        if (!t) {
            ++cur;
        } else if (cur) {
            runs.push_back(cur);
            cur = 0;
        }
    }
    if (cur) runs.push_back(cur);
    return runs;
}

void BlockStrategy::validate(int H) const {
    if (num_blocks < 1 || block_len < 1) throw StrategyError("block counts must be positive");
    if (num_blocks * block_len >= H) throw StrategyError("strategy saturates sequence");
    if (placement == Placement::fixed) {
        if (static_cast<int>(starts.size()) != num_blocks)
            throw StrategyError("fixed placement needs one start per block");
        auto s = starts;
        std::sort(s.begin(), s.end());
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] < 0 || s[i] + block_len > H) throw StrategyError("fixed block out of range");
            if (i && s[i] < s[i - 1] + block_len) throw StrategyError("fixed blocks overlap");
        }
    }
}

void MixedStrategy::validate(int H) const {
    if (components.empty()) throw StrategyError("mixed strategy has no components");
    double w = 0.0;
    for (const auto& c : components) {
        if (!(c.weight >= 0.0)) throw StrategyError("negative component weight");
        c.blocks.validate(H);
        w += c.weight;
    }
    if (std::abs(w - 1.0) > 1e-9) throw StrategyError("component weights must sum to 1");
}

namespace {

Mask draw(const BlockStrategy& s, int H, Rng& rng) {
    const int k = s.num_blocks, b = s.block_len;
    std::vector<int> missing;
    missing.reserve(static_cast<std::size_t>(k * b));
    auto add_block = [&](int start) {
        for (int i = 0; i < b; ++i) missing.push_back(start + i);
    };
    switch (s.placement) {
        case Placement::tail:
            for (int i = H - k * b; i < H; ++i) missing.push_back(i);
            break;
        case Placement::fixed:
            for (int st : s.starts) add_block(st);
            break;
        case Placement::uniform: {
            // uniform over non-overlapping arrangements: pick k of the H-kb+k slots
            const int slots = H - k * b + k;
            std::vector<int> pool(static_cast<std::size_t>(slots));
            std::iota(pool.begin(), pool.end(), 0);
            for (int i = 0; i < k; ++i) {
                long j = rng.uniform_int(i, slots - 1);
                std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            }
            std::vector<int> chosen(pool.begin(), pool.begin() + k);
            std::sort(chosen.begin(), chosen.end());
            for (int i = 0; i < k; ++i) add_block(chosen[static_cast<std::size_t>(i)] + i * (b - 1));
            break;
        }
    }
    return Mask::from_missing(H, missing);
}

}  // namespace

MixedStrategy as_mixed(const BlockStrategy& s) { return MixedStrategy{{{s, 1.0}}}; }

Mask sample_mask(const BlockStrategy& s, int H, std::uint64_t seed) {
    s.validate(H);
    Rng rng(seed);
    return draw(s, H, rng);
}

Mask sample_mask(const MixedStrategy& s, int H, std::uint64_t seed, int* component) {
    s.validate(H);
    Rng rng(seed);
    double u = rng.uniform(0.0, 1.0), acc = 0.0;
    std::size_t pick = s.components.size() - 1;
    for (std::size_t i = 0; i < s.components.size(); ++i) {
        acc += s.components[i].weight;
        if (u < acc) {
            pick = i;
            break;
        }
    }
    if (component) *component = static_cast<int>(pick);
    return draw(s.components[pick].blocks, H, rng);
}

Mask sample_mask(const MixedStrategy& s, int H, std::uint64_t seed) {
    return sample_mask(s, H, seed, nullptr);
}

namespace {
int pattern_total(int H) { return 4 * std::max(1, static_cast<int>(std::lround(H / 24.0))); }
}  // namespace

std::vector<std::pair<std::string, BlockStrategy>> builtin_patterns(int H) {
    const int m = pattern_total(H);
    return {{"P1", {1, m, Placement::uniform, {}}},
            {"P2", {2, m / 2, Placement::uniform, {}}},
            {"P3", {4, m / 4, Placement::uniform, {}}},
            {"P4", {m, 1, Placement::uniform, {}}}};
}

std::map<std::string, MixedStrategy> builtin_strategies(int H) {
    const int m = pattern_total(H);
    BlockStrategy r{m, 1, Placement::uniform, {}}, w{m / 2, 2, Placement::uniform, {}},
        g{m / 4, 4, Placement::uniform, {}}, c{1, m, Placement::uniform, {}};
    std::map<std::string, MixedStrategy> out;
    out["S1"].components = {{r, 1.0}};
    out["S2"].components = {{r, 0.5}, {w, 0.5}};
    out["S3"].components = {{r, 1.0 / 3}, {w, 1.0 / 3}, {g, 1.0 / 3}};
    out["S4"].components = {{r, 0.25}, {w, 0.25}, {g, 0.25}, {c, 0.25}};
    return out;
}

std::vector<int> frame_coords(const std::vector<int>& frames, int d) {
    std::vector<int> idx;
    idx.reserve(frames.size() * static_cast<std::size_t>(d));
    for (int f : frames)
        for (int c = 0; c < d; ++c) idx.push_back(f * d + c);
    return idx;
}

Split apply_mask(const Eigen::VectorXd& seq, const Mask& mask, int d) {
    if (seq.size() != static_cast<Eigen::Index>(mask.H()) * d)
        throw std::invalid_argument("apply_mask: length mismatch");
    Split s;
    s.x_obs = seq(frame_coords(mask.obs(), d));
    s.x_miss = seq(frame_coords(mask.miss(), d));
    return s;
}

Eigen::VectorXd reassemble(const Eigen::VectorXd& x_obs, const Eigen::VectorXd& x_miss,
                           const Mask& mask, int d) {
    if (x_obs.size() != static_cast<Eigen::Index>(mask.obs().size()) * d ||
        x_miss.size() != static_cast<Eigen::Index>(mask.miss().size()) * d)
        throw std::invalid_argument("reassemble: length mismatch");
    Eigen::VectorXd seq(static_cast<Eigen::Index>(mask.H()) * d);
    seq(frame_coords(mask.obs(), d)) = x_obs;
    seq(frame_coords(mask.miss(), d)) = x_miss;
    return seq;
}

std::string placement_name(Placement p) {
    switch (p) {
        case Placement::uniform: return "uniform";
        case Placement::tail: return "tail";
        case Placement::fixed: return "fixed";
    }
    return "?";
}

nlohmann::json to_json(const BlockStrategy& s) {
    nlohmann::json j{{"k", s.num_blocks}, {"b", s.block_len}, {"placement", placement_name(s.placement)}};
    if (s.placement == Placement::fixed) j["starts"] = s.starts;
    return j;
}

nlohmann::json to_json(const MixedStrategy& s) {
    auto arr = nlohmann::json::array();
    for (const auto& c : s.components)
        arr.push_back({{"blocks", nlohmann::json::array({to_json(c.blocks)})}, {"weight", c.weight}});
    return arr;
}

BlockStrategy block_strategy_from_json(const nlohmann::json& j, const std::string& path) {
    BlockStrategy s;
    s.num_blocks = get_req<int>(j, "k", path);
    s.block_len = get_req<int>(j, "b", path);
    auto p = get_opt<std::string>(j, "placement", path, "uniform");
    if (p == "uniform") s.placement = Placement::uniform;
    else if (p == "tail") s.placement = Placement::tail;
    else if (p == "fixed") s.placement = Placement::fixed;
    else throw ConfigError(join_key(path, "placement"), "unknown placement '" + p + "'");
    if (s.placement == Placement::fixed) s.starts = get_req<std::vector<int>>(j, "starts", path);
    return s;
}

MixedStrategy mixed_strategy_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path, "expected an array of components");
    MixedStrategy s;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string p = path + "[" + std::to_string(i) + "]";
        const auto& blocks = require(j[i], "blocks", p);
        if (!blocks.is_array() || blocks.size() != 1)
            throw ConfigError(join_key(p, "blocks"), "expected exactly one block group");
        s.components.push_back({block_strategy_from_json(blocks[0], join_key(p, "blocks[0]")),
                                get_req<double>(j[i], "weight", p)});
    }
    return s;
}

std::string mask_csv_row(const Mask& m) {
    std::ostringstream os;
    for (int i = 0; i < m.H(); ++i) os << (i ? "," : "") << int(m.observed(i));
    return os.str();
}

}  // namespace gpimpute
