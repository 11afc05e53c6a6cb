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
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace gpimpute {

// tau[i] = 1 if frame i is observed. Indices are 0-based.
class Mask {
public:
    Mask() = default;
    explicit Mask(std::vector<std::uint8_t> tau);
    static Mask from_missing(int H, const std::vector<int>& missing);

    int H() const { return static_cast<int>(tau_.size()); }
    const std::vector<std::uint8_t>& tau() const { return tau_; }
    const std::vector<int>& obs() const { return obs_; }
    const std::vector<int>& miss() const { return miss_; }
    bool observed(int i) const { return tau_[static_cast<std::size_t>(i)] != 0; }

    // lengths of maximal missing runs, left to right
    std::vector<int> missing_runs() const;

    bool operator==(const Mask& o) const { return tau_ == o.tau_; }

private:
    std::vector<std::uint8_t> tau_;
    std::vector<int> obs_, miss_;
};

enum class Placement { uniform, tail, fixed };

struct BlockStrategy {
    int num_blocks = 1;
    int block_len = 1;
    Placement placement = Placement::uniform;
    std::vector<int> starts;  // fixed placement only

    void validate(int H) const;
};

struct MixedStrategy {
    struct Component {
        BlockStrategy blocks;
        double weight = 1.0;
    };
    std::vector<Component> components;

    void validate(int H) const;
};

struct StrategyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// single-component mixture
MixedStrategy as_mixed(const BlockStrategy& s);

Mask sample_mask(const BlockStrategy& s, int H, std::uint64_t seed);
Mask sample_mask(const MixedStrategy& s, int H, std::uint64_t seed);
// also reports which component was drawn
Mask sample_mask(const MixedStrategy& s, int H, std::uint64_t seed, int* component);

// P1 = 1 block of H/6, P2 = 2 of H/12, P3 = 4 of H/24, P4 = H/6 singletons (16 missing at H=96).
std::vector<std::pair<std::string, BlockStrategy>> builtin_patterns(int H);
// S1..S4 built from the same block vocabulary.
std::map<std::string, MixedStrategy> builtin_strategies(int H);

struct Split {
    Eigen::VectorXd x_obs;
    Eigen::VectorXd x_miss;
};
Split apply_mask(const Eigen::VectorXd& seq, const Mask& mask, int d);
Eigen::VectorXd reassemble(const Eigen::VectorXd& x_obs, const Eigen::VectorXd& x_miss,
                           const Mask& mask, int d);
// coordinate indices of the listed frames, each frame expanded to d entries
std::vector<int> frame_coords(const std::vector<int>& frames, int d);

std::string placement_name(Placement p);
nlohmann::json to_json(const BlockStrategy& s);
nlohmann::json to_json(const MixedStrategy& s);
// path names the config location for error messages
BlockStrategy block_strategy_from_json(const nlohmann::json& j, const std::string& path);
MixedStrategy mixed_strategy_from_json(const nlohmann::json& j, const std::string& path);
std::string mask_csv_row(const Mask& m);

}  // namespace gpimpute
