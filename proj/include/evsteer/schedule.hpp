#pragma once

#include "evsteer/common.hpp"

namespace evsteer {

// Steering is enabled on the prefix step < max_steps AND block < max_blocks.
struct SteeringSchedule {
    int max_steps = 20;
    int max_blocks = 20;
    int total_steps = 50;
    int total_blocks = 40;

    // 20 of 50 denoising steps, 20 of 40 blocks.
    static SteeringSchedule standard() { return {}; }

    void validate() const;
    [[nodiscard]] long long active_pairs() const { return static_cast<long long>(max_steps) * max_blocks; }
};

bool is_active(int step, int block, const SteeringSchedule& sched);

} // namespace evsteer
