#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "cva/state.hpp"

namespace cva::plots {

namespace fs = std::filesystem;

// Equal-width bins over [lo, hi]; the last bin is closed. A constant sample
// gets a unit-wide range centred on its value.
struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::size_t> counts;

    double width() const { return (hi - lo) / static_cast<double>(counts.size()); }
};

Histogram histogram(std::span<const double> values, int bins = 30);

// Per dimension: scatter_<dim>.png (true vs predicted with the identity line)
// and hist_<dim>.png (prediction error), each with a CSV sidecar of the same stem.
// Returns the PNG paths.
std::vector<fs::path> emit_plots(const torch::Tensor& predicted, const torch::Tensor& target, const fs::path& dir,
                                 int bins = 30);

// violin_<dim>.png with one violin per named split, plus violin_<dim>.csv holding the density curves.
std::vector<fs::path> emit_violins(const std::vector<std::pair<std::string, std::vector<StateVector>>>& splits,
                                   const fs::path& dir);

}  // namespace cva::plots
