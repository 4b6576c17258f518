#pragma once

#include <functional>
#include <string>
#include <vector>

namespace galu {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

using CheckSink = std::function<void(const CheckResult&)>;

/// The ten numbered acceptance criteria, each at its pinned tolerance.
/// `on_result`, when given, fires as each criterion finishes.
std::vector<CheckResult> acceptance_criteria(const CheckSink& on_result = {});

/// Module-level invariant checks; `quick` trims case counts and skips the
/// training-based studies so a fresh checkout can be smoke-tested fast.
std::vector<CheckResult> invariant_checks(bool quick, const CheckSink& on_result = {});

}  // namespace galu
