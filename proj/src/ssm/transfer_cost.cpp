#include <string>

#include "ssmvis/error.hpp"
#include "ssmvis/ssm.hpp"

namespace ssmvis::ssm {

TransferCostReport transfer_cost(TransferMode mode, std::uint64_t length, std::uint64_t d_state,
                                 std::uint64_t d_inner) {
  if (length == 0 || d_state == 0 || d_inner == 0) {
    throw ShapeError("transfer_cost: L, d_state and d_inner must all be >= 1");
  }
  const std::uint64_t n = d_state;
  TransferCostReport report;
  report.mode = mode;
  switch (mode) {
    case TransferMode::naive:
      report.breakdown.state_traffic = length * 2 * n;
      report.breakdown.parameter_traffic = length * 2 * n;  // B_bar, C
      report.breakdown.io_traffic = length * 2;
      break;
    case TransferMode::fused:
      report.breakdown.state_traffic = length * n;                  // h written back
      report.breakdown.parameter_traffic = n + length * (2 * n + 1);  // A once; B, C, delta
      report.breakdown.io_traffic = length * 2;
      break;
    default: throw ShapeError("transfer_cost: unknown mode");
  }
  report.breakdown.state_traffic *= d_inner;
  report.breakdown.parameter_traffic *= d_inner;
  report.breakdown.io_traffic *= d_inner;
  report.words_moved = report.breakdown.state_traffic + report.breakdown.parameter_traffic +
                       report.breakdown.io_traffic;
  return report;
}

TransferMode parse_transfer_mode(std::string_view name) {
  if (name == "naive") return TransferMode::naive;
  if (name == "fused") return TransferMode::fused;
  throw ShapeError("transfer_cost: unknown mode '" + std::string{name} + "' (expected naive or fused)");
}

}  // namespace ssmvis::ssm
