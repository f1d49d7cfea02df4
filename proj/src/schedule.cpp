#include "evsteer/schedule.hpp"

#include <string>

namespace evsteer {

void SteeringSchedule::validate() const
{
    if (total_steps < 1 || total_blocks < 1) throw ValidationError("schedule: totals must be positive");
    if (max_steps < 0 || max_blocks < 0) throw ValidationError("schedule: steering prefix must be >= 0");
    if (max_steps > total_steps) throw ValidationError("schedule: max_steps exceeds total_steps");
    if (max_blocks > total_blocks) throw ValidationError("schedule: max_blocks exceeds total_blocks");
}

bool is_active(int step, int block, const SteeringSchedule& sched)
{
    if (step < 0 || step >= sched.total_steps) {
        throw ValidationError("is_active: step " + std::to_string(step) + " outside [0, " +
                              std::to_string(sched.total_steps) + ")");
    }
    if (block < 0 || block >= sched.total_blocks) {
        throw ValidationError("is_active: block " + std::to_string(block) + " outside [0, " +
                              std::to_string(sched.total_blocks) + ")");
    }
    return step < sched.max_steps && block < sched.max_blocks;
}

} // namespace evsteer
