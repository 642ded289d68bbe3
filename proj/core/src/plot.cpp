#include "coronagan/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace coronagan::plot {
namespace {

struct Series {
  const char* label;
  const char* color;
  double loss::LossBreakdown::*field;
};

constexpr Series kAdversarial[] = {
    {"adv_g_OH", "#1f77b4", &loss::LossBreakdown::adv_g_OH},
    {"adv_g_HO", "#ff7f0e", &loss::LossBreakdown::adv_g_HO},
    {"adv_d_H", "#2ca02c", &loss::LossBreakdown::adv_d_H},
    {"adv_d_O", "#d62728", &loss::LossBreakdown::adv_d_O},
};
constexpr Series kStructural[] = {
    {"cycle", "#9467bd", &loss::LossBreakdown::cycle},
    {"embedding", "#8c564b", &loss::LossBreakdown::embedding},
    {"coronary", "#e377c2", &loss::LossBreakdown::coronary},
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

template <std::size_t K>
void panel(std::ostringstream& svg, const std::vector<EpochMeans>& means,
           const Series (&series)[K], double x0, const char* title) {
  constexpr double kW = 420, kH = 300, kTop = 50, kLeft = 60;
  const double left = x0 + kLeft;
  const double bottom = kTop + kH;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& m : means) {
    for (const auto& s : series) {
      lo = std::min(lo, m.losses.*s.field);
      hi = std::max(hi, m.losses.*s.field);
    }
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const int e0 = means.front().epoch;
  const int e1 = std::max(means.back().epoch, e0 + 1);
  const auto px = [&](double e) { return left + (e - e0) / (e1 - e0) * kW; };
  const auto py = [&](double v) { return bottom - (v - lo) / (hi - lo) * kH; };

  svg << "<text x=\"" << left + kW / 2 << "\" y=\"30\" text-anchor=\"middle\" font-size=\"15\">"
      << title << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << kTop << "\" width=\"" << kW << "\" height=\"" << kH
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4;
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4
        << "\" text-anchor=\"end\" font-size=\"11\">" << num(v) << "</text>\n";
    const double e = e0 + (e1 - e0) * t / 4.0;
    svg << "<text x=\"" << px(e) << "\" y=\"" << bottom + 16
        << "\" text-anchor=\"middle\" font-size=\"11\">" << num(e) << "</text>\n";
  }
  svg << "<text x=\"" << left + kW / 2 << "\" y=\"" << bottom + 36
      << "\" text-anchor=\"middle\" font-size=\"12\">epoch</text>\n";
  for (std::size_t k = 0; k < K; ++k) {
    const auto& s = series[k];
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& m : means) svg << px(m.epoch) << ',' << py(m.losses.*s.field) << ' ';
    svg << "\"/>\n";
    const double ly = kTop + 14 + 16.0 * k;
    svg << "<line x1=\"" << left + kW - 110 << "\" y1=\"" << ly - 4 << "\" x2=\""
        << left + kW - 90 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << s.color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + kW - 85 << "\" y=\"" << ly << "\" font-size=\"11\">" << s.label
        << "</text>\n";
  }
}

}  // namespace

std::vector<EpochMeans> epoch_means(const std::vector<train::LossRecord>& records) {
  std::map<int, std::pair<loss::LossBreakdown, int>> acc;
  for (const auto& r : records) {
    auto& [sum, n] = acc[r.epoch];
    sum.adv_g_OH += r.losses.adv_g_OH;
    sum.adv_g_HO += r.losses.adv_g_HO;
    sum.adv_d_H += r.losses.adv_d_H;
    sum.adv_d_O += r.losses.adv_d_O;
    sum.cycle += r.losses.cycle;
    sum.embedding += r.losses.embedding;
    sum.coronary += r.losses.coronary;
    sum.total_g += r.losses.total_g;
    ++n;
  }
  std::vector<EpochMeans> out;
  for (const auto& [epoch, entry] : acc) {
    const auto& [sum, n] = entry;
    EpochMeans m;
    m.epoch = epoch;
    m.losses.adv_g_OH = sum.adv_g_OH / n;
    m.losses.adv_g_HO = sum.adv_g_HO / n;
    m.losses.adv_d_H = sum.adv_d_H / n;
    m.losses.adv_d_O = sum.adv_d_O / n;
    m.losses.cycle = sum.cycle / n;
    m.losses.embedding = sum.embedding / n;
    m.losses.coronary = sum.coronary / n;
    m.losses.total_g = sum.total_g / n;
    out.push_back(m);
  }
  return out;
}

std::string render_loss_svg(const std::vector<EpochMeans>& means) {
  if (means.empty()) throw ValidationError("no loss records to plot");
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1040\" height=\"400\" "
         "font-family=\"sans-serif\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  panel(svg, means, kAdversarial, 0, "(a) adversarial losses");
  panel(svg, means, kStructural, 520, "(b) cycle, embedding and coronary losses");
  svg << "</svg>\n";
  return svg.str();
}

void plot_losses(const std::filesystem::path& csv, const std::filesystem::path& out_svg) {
  const std::string svg = render_loss_svg(epoch_means(train::read_loss_csv(csv)));
  if (out_svg.has_parent_path()) std::filesystem::create_directories(out_svg.parent_path());
  std::ofstream out(out_svg);
  if (!out) throw IoError("cannot write " + out_svg.string());
  out << svg;
  if (!out) throw IoError("write failed: " + out_svg.string());
}

}  // namespace coronagan::plot
