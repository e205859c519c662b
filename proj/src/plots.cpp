#include "cva/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace cva::plots {
namespace {

constexpr int kSize = 480;
constexpr int kMargin = 56;
const cv::Scalar kInk(40, 40, 40);
const cv::Scalar kGrid(225, 225, 225);
const cv::Scalar kBlue(180, 110, 30);
const cv::Scalar kRed(40, 40, 200);

struct Frame {
    double x0, x1, y0, y1;

    cv::Point px(double x, double y) const {
        const double u = (x - x0) / (x1 - x0);
        const double v = (y - y0) / (y1 - y0);
        return {kMargin + static_cast<int>(std::lround(u * (kSize - 2 * kMargin))),
                kSize - kMargin - static_cast<int>(std::lround(v * (kSize - 2 * kMargin)))};
    }
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.4) {
    cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, kInk, 1, cv::LINE_AA);
}

cv::Mat axes(const Frame& f, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
    cv::Mat img(kSize, kSize, CV_8UC3, cv::Scalar(255, 255, 255));
    for (int i = 0; i <= 4; ++i) {
        const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
        const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
        cv::line(img, f.px(x, f.y0), f.px(x, f.y1), kGrid, 1);
        cv::line(img, f.px(f.x0, y), f.px(f.x1, y), kGrid, 1);
        text(img, fmt(x), f.px(x, f.y0) + cv::Point(-14, 16), 0.35);
        text(img, fmt(y), f.px(f.x0, y) + cv::Point(-50, 4), 0.35);
    }
    cv::rectangle(img, f.px(f.x0, f.y1), f.px(f.x1, f.y0), kInk, 1);
    text(img, title, {kMargin, 24}, 0.5);
    text(img, xlabel, {kSize / 2 - 30, kSize - 14});
    text(img, ylabel, {6, kMargin - 10});
    return img;
}

void save(const fs::path& path, const cv::Mat& img) {
    if (!cv::imwrite(path.string(), img)) throw std::runtime_error("failed to write " + path.string());
}

std::ofstream open_csv(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] * (1 - frac) + v[i + 1] * frac : v[i];
}

}  // namespace

Histogram histogram(std::span<const double> values, int bins) {
    if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
    if (values.empty()) throw std::invalid_argument("histogram: no values");
    Histogram h;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    h.lo = *mn;
    h.hi = *mx;
    if (h.hi == h.lo) {
        h.lo -= 0.5;
        h.hi += 0.5;
    }
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double w = h.width();
    for (double v : values) {
        auto b = static_cast<std::int64_t>(std::floor((v - h.lo) / w));
        b = std::clamp<std::int64_t>(b, 0, bins - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

std::vector<fs::path> emit_plots(const torch::Tensor& predicted, const torch::Tensor& target, const fs::path& dir,
                                 int bins) {
    if (predicted.dim() != 2 || predicted.sizes() != target.sizes() || predicted.size(1) != kStateDim)
        throw std::invalid_argument("emit_plots: predictions and targets must both be [M, 3]");
    fs::create_directories(dir);
    const auto p = predicted.to(torch::kFloat64).contiguous();
    const auto t = target.to(torch::kFloat64).contiguous();
    const auto pa = p.accessor<double, 2>();
    const auto ta = t.accessor<double, 2>();
    const auto m = p.size(0);

    std::vector<fs::path> written;
    for (int d = 0; d < kStateDim; ++d) {
        const std::string name(kStateNames[static_cast<std::size_t>(d)]);
        std::vector<double> truth(static_cast<std::size_t>(m)), pred(truth.size()), err(truth.size());
        for (int64_t i = 0; i < m; ++i) {
            truth[static_cast<std::size_t>(i)] = ta[i][d];
            pred[static_cast<std::size_t>(i)] = pa[i][d];
            err[static_cast<std::size_t>(i)] = pa[i][d] - ta[i][d];
        }

        double lo = std::min(*std::min_element(truth.begin(), truth.end()), *std::min_element(pred.begin(), pred.end()));
        double hi = std::max(*std::max_element(truth.begin(), truth.end()), *std::max_element(pred.begin(), pred.end()));
        if (hi - lo < 1e-9) {
            lo -= 0.5;
            hi += 0.5;
        }
        const double pad = 0.05 * (hi - lo);
        const Frame sf{lo - pad, hi + pad, lo - pad, hi + pad};
        cv::Mat scatter = axes(sf, name + ": true vs predicted", "true", "predicted");
        cv::line(scatter, sf.px(sf.x0, sf.y0), sf.px(sf.x1, sf.y1), kRed, 1, cv::LINE_AA);
        for (std::size_t i = 0; i < truth.size(); ++i)
            cv::circle(scatter, sf.px(truth[i], pred[i]), 2, kBlue, cv::FILLED, cv::LINE_AA);
        const fs::path scatter_png = dir / ("scatter_" + name + ".png");
        save(scatter_png, scatter);
        written.push_back(scatter_png);
        auto scsv = open_csv(dir / ("scatter_" + name + ".csv"));
        scsv << "true,predicted,error\n";
        for (std::size_t i = 0; i < truth.size(); ++i) scsv << num(truth[i]) << ',' << num(pred[i]) << ',' << num(err[i]) << '\n';

        const Histogram h = histogram(err, bins);
        const double peak = static_cast<double>(*std::max_element(h.counts.begin(), h.counts.end()));
        const Frame hf{h.lo, h.hi, 0.0, peak * 1.1};
        cv::Mat hist = axes(hf, name + ": prediction error", "predicted - true", "count");
        for (std::size_t b = 0; b < h.counts.size(); ++b) {
            const double x0 = h.lo + h.width() * static_cast<double>(b);
            cv::rectangle(hist, hf.px(x0, static_cast<double>(h.counts[b])), hf.px(x0 + h.width(), 0.0), kBlue,
                          cv::FILLED);
            cv::rectangle(hist, hf.px(x0, static_cast<double>(h.counts[b])), hf.px(x0 + h.width(), 0.0), kInk, 1);
        }
        const fs::path hist_png = dir / ("hist_" + name + ".png");
        save(hist_png, hist);
        written.push_back(hist_png);
        auto hcsv = open_csv(dir / ("hist_" + name + ".csv"));
        hcsv << "bin,lo,hi,count\n";
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            hcsv << b << ',' << num(h.lo + h.width() * static_cast<double>(b)) << ','
                 << num(h.lo + h.width() * static_cast<double>(b + 1)) << ',' << h.counts[b] << '\n';
    }
    return written;
}

std::vector<fs::path> emit_violins(const std::vector<std::pair<std::string, std::vector<StateVector>>>& splits,
                                   const fs::path& dir) {
    if (splits.empty()) throw std::invalid_argument("emit_violins: no splits");
    fs::create_directories(dir);
    constexpr int kGridPoints = 100;
    std::vector<fs::path> written;
    for (int d = 0; d < kStateDim; ++d) {
        const std::string name(kStateNames[static_cast<std::size_t>(d)]);
        std::vector<std::vector<double>> columns;
        double lo = 1e300, hi = -1e300;
        for (const auto& [split, rows] : splits) {
            if (rows.empty()) throw std::invalid_argument("emit_violins: split '" + split + "' is empty");
            auto& col = columns.emplace_back();
            for (const auto& r : rows) col.push_back(r[d]);
            lo = std::min(lo, *std::min_element(col.begin(), col.end()));
            hi = std::max(hi, *std::max_element(col.begin(), col.end()));
        }
        if (hi - lo < 1e-9) {
            lo -= 0.5;
            hi += 0.5;
        }

        auto csv = open_csv(dir / ("violin_" + name + ".csv"));
        csv << "split,value,density\n";
        const Frame f{0.0, static_cast<double>(splits.size()), lo, hi};
        cv::Mat img = axes(f, name + " distribution per split", "split", name);
        for (std::size_t s = 0; s < columns.size(); ++s) {
            const auto& col = columns[s];
            double mean = 0.0;
            for (double v : col) mean += v;
            mean /= static_cast<double>(col.size());
            double var = 0.0;
            for (double v : col) var += (v - mean) * (v - mean);
            const double sd = std::sqrt(var / static_cast<double>(col.size()));
            // Silverman's rule of thumb, with a floor for near-constant columns
            const double bw = std::max(1.06 * sd * std::pow(static_cast<double>(col.size()), -0.2), 1e-3 * (hi - lo));

            std::vector<double> grid(kGridPoints), dens(kGridPoints);
            double peak = 0.0;
            for (int g = 0; g < kGridPoints; ++g) {
                grid[g] = lo + (hi - lo) * g / (kGridPoints - 1);
                double acc = 0.0;
                for (double v : col) {
                    const double z = (grid[g] - v) / bw;
                    acc += std::exp(-0.5 * z * z);
                }
                dens[g] = acc / (static_cast<double>(col.size()) * bw * std::sqrt(2.0 * std::numbers::pi));
                peak = std::max(peak, dens[g]);
                csv << splits[s].first << ',' << num(grid[g]) << ',' << num(dens[g]) << '\n';
            }

            const double centre = static_cast<double>(s) + 0.5;
            std::vector<cv::Point> outline;
            for (int g = 0; g < kGridPoints; ++g) outline.push_back(f.px(centre - 0.4 * dens[g] / peak, grid[g]));
            for (int g = kGridPoints - 1; g >= 0; --g) outline.push_back(f.px(centre + 0.4 * dens[g] / peak, grid[g]));
            cv::fillPoly(img, std::vector<std::vector<cv::Point>>{outline}, cv::Scalar(230, 200, 160), cv::LINE_AA);
            cv::polylines(img, std::vector<std::vector<cv::Point>>{outline}, true, kBlue, 1, cv::LINE_AA);
            const double q1 = quantile(col, 0.25), med = quantile(col, 0.5), q3 = quantile(col, 0.75);
            cv::line(img, f.px(centre, q1), f.px(centre, q3), kInk, 3);
            cv::circle(img, f.px(centre, med), 3, cv::Scalar(255, 255, 255), cv::FILLED);
            text(img, splits[s].first, f.px(centre, lo) + cv::Point(-18, 30));
        }
        const fs::path png = dir / ("violin_" + name + ".png");
        save(png, img);
        written.push_back(png);
    }
    return written;
}

}  // namespace cva::plots
