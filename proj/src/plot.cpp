#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "adamix/experiment.hpp"

namespace adamix {

namespace fs = std::filesystem;

namespace {

struct Series {
  // iteration -> (sum, count) so seeds average out
  std::map<std::int64_t, std::pair<double, int>> points;
};

using SeriesSet = std::map<std::string, Series>;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

fs::path curves_file(const fs::path& input) {
  return fs::is_directory(input) ? input / "curves.csv" : input;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void write_svg(const fs::path& path, const std::string& title, const SeriesSet& set) {
  constexpr double W = 720, H = 440, L = 70, R = 200, T = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [_, s] : set) {
    for (const auto& [x, acc] : s.points) {
      const double y = acc.first / acc.second;
      xmin = std::min(xmin, double(x));
      xmax = std::max(xmax, double(x));
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 - R / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
      << "</text>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double xv = xmin + (xmax - xmin) * k / 5.0;
    const double yv = ymin + (ymax - ymin) * k / 5.0;
    out << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << num(xv)
        << "</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
        << "\" stroke=\"#e0e0e0\"/>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">iteration</text>\n";
  int k = 0;
  for (const auto& [name, s] : set) {
    const char* color = palette[k % 10];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
    for (const auto& [x, acc] : s.points) out << px(double(x)) << ',' << py(acc.first / acc.second) << ' ';
    out << "\"/>\n";
    const double ly = T + 10 + 18 * k;
    out << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << escape(name) << "</text>\n";
    ++k;
  }
  out << "</svg>\n";
}

}  // namespace

std::vector<fs::path> render_plots(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
  if (inputs.empty()) throw PreconditionError("plot: no inputs");
  const char* metrics[] = {"loss_unsup", "loss_val", "dsc_val"};
  SeriesSet sets[3];
  for (const fs::path& input : inputs) {
    const fs::path file = curves_file(input);
    std::ifstream in(file);
    if (!in) throw FormatError("plot: cannot open " + file.string());
    std::string line;
    std::getline(in, line);
    if (line != curves_header()) throw FormatError("plot: unexpected header in " + file.string());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != 7) throw FormatError("plot: malformed row in " + file.string());
      const std::string name = cells[0] + " / " + cells[1];
      const std::int64_t it = std::stoll(cells[3]);
      for (int m = 0; m < 3; ++m) {
        auto& acc = sets[m][name].points[it];
        acc.first += std::stod(cells[4 + m]);
        acc.second += 1;
      }
    }
  }
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (int m = 0; m < 3; ++m) {
    const fs::path path = out_dir / (std::string(metrics[m]) + ".svg");
    write_svg(path, std::string(metrics[m]) + " (mean over seeds)", sets[m]);
    written.push_back(path);
  }
  return written;
}

}  // namespace adamix
