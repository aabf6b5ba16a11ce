#pragma once

#include <string>

#include "idistill/metrics.hpp"

namespace idistill {

/// Standalone SVG of the DET curve (APCER vs BPCER, linear percent axes),
/// with the EER point marked.
std::string det_svg(const EvalReport& report);

/// Plain-text table with the columns EER, BPCER@APCER=1%, BPCER@APCER=20%
/// (all in percent).
std::string summary_table(const EvalReport& report, const std::string& label = "IDistill");

}  // namespace idistill
