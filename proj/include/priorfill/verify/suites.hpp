#pragma once

#include <string>
#include <vector>

#include "priorfill/verify/gradcheck.hpp"

namespace priorfill {

struct GradSuiteReport {
    std::string module;
    std::vector<GradCheckResult> results;
    bool passed() const;
    /// Result with the largest relative error.
    const GradCheckResult& worst() const;
};

/// Modules with a finite-difference suite: numerics, mae, upsampler, acr, losses.
const std::vector<std::string>& gradcheck_modules();
/// Throws ConfigError for an unknown module.
GradSuiteReport run_gradcheck_suite(const std::string& module);

struct SelfCheck {
    std::string suite;
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Invariant checks for every module; each module contributes at least one.
std::vector<SelfCheck> run_selftest();
/// Module names `run_selftest` must cover.
const std::vector<std::string>& selftest_modules();

}  // namespace priorfill
