#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coronagan/training.hpp"

namespace coronagan::plot {

/// Per-epoch means of every loss column, in epoch order.
struct EpochMeans {
  int epoch = 0;
  loss::LossBreakdown losses;
};
[[nodiscard]] std::vector<EpochMeans> epoch_means(const std::vector<train::LossRecord>& records);

/// Two-panel SVG: (a) adversarial terms, (b) cycle / embedding / coronary.
/// The x axis is the epoch.
[[nodiscard]] std::string render_loss_svg(const std::vector<EpochMeans>& means);

/// Reads a training loss CSV and writes the SVG figure.
void plot_losses(const std::filesystem::path& csv, const std::filesystem::path& out_svg);

}  // namespace coronagan::plot
