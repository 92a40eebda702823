#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace seqtrojan {

// "0.641 ± 0.004"
std::string format_mean_std(double mean, double std, int digits = 3);

// Renders plots and a text table for a run directory (aggregate.json), a
// sweep directory (sweep_table.ndjson) or a directory holding several run
// directories. Files go to <dir>/report/ and are returned sorted.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir);

}  // namespace seqtrojan
