#include "gcr/plot.hpp"

#include "gcr/common.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace gcr {

namespace {

constexpr int kWidth = 900;
constexpr int kHeight = 600;
constexpr int kMarginLeft = 80;
constexpr int kMarginRight = 30;
constexpr int kMarginTop = 50;
constexpr int kMarginBottom = 60;

const cv::Scalar kAxis(60, 60, 60);
const cv::Scalar kText(30, 30, 30);
const std::vector<cv::Scalar> kSeries{
    {180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214}, {189, 103, 148}, {75, 86, 140}};

struct Frame {
    cv::Mat canvas{kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255)};
    double x0, x1, y0, y1;

    Frame(double xmin, double xmax, double ymin, double ymax)
        : x0(xmin), x1(xmax), y0(ymin), y1(ymax) {
        if (x1 <= x0) x1 = x0 + 1.0;
        if (y1 <= y0) y1 = y0 + 1.0;
    }
    cv::Point map(double x, double y) const {
        const int px = kMarginLeft + static_cast<int>((x - x0) / (x1 - x0) *
                                                      (kWidth - kMarginLeft - kMarginRight));
        const int py = kHeight - kMarginBottom -
                       static_cast<int>((y - y0) / (y1 - y0) *
                                        (kHeight - kMarginTop - kMarginBottom));
        return {px, py};
    }
    void axes(const std::string& title, const std::string& y_label) {
        cv::rectangle(canvas, map(x0, y1), map(x1, y0), kAxis, 1);
        cv::putText(canvas, title, {kMarginLeft, 30}, cv::FONT_HERSHEY_SIMPLEX, 0.7, kText, 1,
                    cv::LINE_AA);
        cv::putText(canvas, y_label, {8, kMarginTop - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kText,
                    1, cv::LINE_AA);
        for (int tick = 0; tick <= 4; ++tick) {
            const double ty = y0 + (y1 - y0) * tick / 4.0;
            const cv::Point p = map(x0, ty);
            cv::line(canvas, p, {p.x - 5, p.y}, kAxis, 1);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.3g", ty);
            cv::putText(canvas, buf, {8, p.y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kText, 1,
                        cv::LINE_AA);
            const double tx = x0 + (x1 - x0) * tick / 4.0;
            const cv::Point q = map(tx, y0);
            cv::line(canvas, q, {q.x, q.y + 5}, kAxis, 1);
            std::snprintf(buf, sizeof(buf), "%.4g", tx);
            cv::putText(canvas, buf, {q.x - 15, kHeight - kMarginBottom + 22},
                        cv::FONT_HERSHEY_SIMPLEX, 0.4, kText, 1, cv::LINE_AA);
        }
    }
    void save(const std::string& path) const {
        require<IngestionError>(cv::imwrite(path, canvas), "plot: cannot write " + path);
    }
};

}  // namespace

void plot_line(const std::vector<double>& x, const std::vector<double>& y,
               const std::string& title, const std::string& y_label, const std::string& path) {
    require<ContractError>(!x.empty() && x.size() == y.size(), "plot_line: bad series");
    const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
    const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
    const double pad = std::max(1e-9, (*ymax - *ymin) * 0.05);
    Frame f(*xmin, *xmax, *ymin - pad, *ymax + pad);
    f.axes(title, y_label);
    for (std::size_t i = 1; i < x.size(); ++i)
        cv::line(f.canvas, f.map(x[i - 1], y[i - 1]), f.map(x[i], y[i]), kSeries[0], 1,
                 cv::LINE_AA);
    f.save(path);
}

void plot_grouped_bars(const std::vector<std::string>& group_labels,
                       const std::vector<std::string>& series_labels,
                       const std::vector<std::vector<double>>& values, const std::string& title,
                       const std::string& path) {
    require<ContractError>(!values.empty() && values.size() == series_labels.size(),
                           "plot_grouped_bars: bad series");
    for (const auto& row : values)
        require<ContractError>(row.size() == group_labels.size(),
                               "plot_grouped_bars: ragged values");

    double vmax = 0.0;
    for (const auto& row : values)
        for (double v : row) vmax = std::max(vmax, v);
    if (vmax <= 0.0) vmax = 1.0;

    Frame f(0.0, static_cast<double>(group_labels.size()), 0.0, vmax * 1.1);
    f.axes(title, "");
    const int n_series = static_cast<int>(series_labels.size());
    const double slot = 1.0 / (n_series + 1);
    for (int s = 0; s < n_series; ++s) {
        const cv::Scalar color = kSeries[s % kSeries.size()];
        for (std::size_t g = 0; g < group_labels.size(); ++g) {
            const double left = g + slot * (0.5 + s);
            cv::rectangle(f.canvas, f.map(left, values[s][g]), f.map(left + slot * 0.9, 0.0),
                          color, cv::FILLED);
        }
        cv::putText(f.canvas, series_labels[s],
                    {kWidth - kMarginRight - 180, kMarginTop + 20 * (s + 1)},
                    cv::FONT_HERSHEY_SIMPLEX, 0.45, color, 1, cv::LINE_AA);
    }
    for (std::size_t g = 0; g < group_labels.size(); ++g) {
        const cv::Point p = f.map(g + 0.5, 0.0);
        cv::putText(f.canvas, group_labels[g], {p.x - 30, kHeight - kMarginBottom + 22},
                    cv::FONT_HERSHEY_SIMPLEX, 0.45, kText, 1, cv::LINE_AA);
    }
    f.save(path);
}

}  // namespace gcr
