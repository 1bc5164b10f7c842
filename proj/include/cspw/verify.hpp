// Verification suites: every proposition, identity, and reduction from the
// other modules, executed sequentially with a machine-readable report line
// per suite. The fault-injection hook deliberately breaks the gated
// discount window so the harness can prove the suites have teeth.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cspw/attention.hpp"
#include "cspw/config.hpp"

namespace cspw {

struct SuiteResult {
    std::string name;
    bool pass = false;
    double max_err = 0.0;
    double tol = 0.0;
    int64_t n_cases = 0;
};

std::vector<SuiteResult> run_verification(const RunConfig& config, const FaultInjection& fault);

// One line per suite: `name status max_err tol n_cases`.
std::string format_report(const std::vector<SuiteResult>& results);

FaultInjection fault_from_name(const std::string& name);  // "" or "gating-offby-one"

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t n_checked = 0;
    std::vector<std::pair<std::string, double>> per_tensor;
};

// Central finite differences vs analytic gradients over every parameter
// tensor of a toy model.
GradCheckResult gradient_check(const ModelConfig& config, uint64_t seed, int64_t context,
                               double h);

}  // namespace cspw
