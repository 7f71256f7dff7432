#ifndef FETALSEG_SVG_HPP
#define FETALSEG_SVG_HPP

#include <string>
#include <vector>

#include "fetalseg/embed.hpp"
#include "fetalseg/train.hpp"

namespace fetalseg::svg {

// Scatter of embedded points, one panel per plane (TC left, TV right), one
// color per device, with a shared legend.
void write_embedding_scatter(const std::vector<EmbeddingPoint>& points, const std::vector<std::string>& devices,
                             const std::string& path);

// Grouped bars: per-class Dice, one group per class, one bar per
// (test_set, arm) series. Tolerates an empty report.
void write_dice_bar_chart(const DiceReport& report, const std::string& path);

// Radial (spider) chart: one axis per structure, one polygon per
// (test_set, arm) series.
void write_dice_radial_chart(const DiceReport& report, const std::string& path);

}  // namespace fetalseg::svg

#endif
