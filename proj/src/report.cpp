#include "idistill/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace idistill {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

std::string det_svg(const EvalReport& report) {
  constexpr double kSize = 400.0;
  constexpr double kMargin = 50.0;
  auto px = [&](double rate) { return kMargin + rate * kSize; };
  auto py = [&](double rate) { return kMargin + (1.0 - rate) * kSize; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kMargin << "\" height=\""
     << kSize + 2 * kMargin << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kSize << "\" height=\"" << kSize
     << "\" fill=\"white\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 10; ++i) {
    const double r = i / 10.0;
    os << "<line x1=\"" << px(r) << "\" y1=\"" << py(0) << "\" x2=\"" << px(r) << "\" y2=\"" << py(1)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<line x1=\"" << px(0) << "\" y1=\"" << py(r) << "\" x2=\"" << px(1) << "\" y2=\"" << py(r)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << px(r) << "\" y=\"" << py(0) + 16 << "\" text-anchor=\"middle\">" << i * 10 << "</text>\n";
    os << "<text x=\"" << px(0) - 6 << "\" y=\"" << py(r) + 4 << "\" text-anchor=\"end\">" << i * 10 << "</text>\n";
  }
  os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
     << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& [a, b] : report.det) os << px(a) << "," << py(b) << " ";
  os << "\"/>\n";
  os << "<circle cx=\"" << px(report.eer) << "\" cy=\"" << py(report.eer) << "\" r=\"4\" fill=\"#d62728\"/>\n";
  os << "<text x=\"" << kMargin + kSize / 2 << "\" y=\"" << kSize + 2 * kMargin - 10
     << "\" text-anchor=\"middle\">APCER (%)</text>\n";
  os << "<text x=\"14\" y=\"" << kMargin + kSize / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << kMargin + kSize / 2 << ")\">BPCER (%)</text>\n";
  os << "<text x=\"" << kMargin + kSize / 2 << "\" y=\"30\" text-anchor=\"middle\">DET curve, EER "
     << fmt("%.2f", 100.0 * report.eer) << "%</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string summary_table(const EvalReport& report, const std::string& label) {
  auto at = [&](const char* key) {
    const auto it = report.bpcer_at_apcer.find(key);
    return it == report.bpcer_at_apcer.end() ? std::string("n/a") : fmt("%.2f", 100.0 * it->second);
  };
  const std::size_t width = std::max<std::size_t>(label.size(), 5);
  std::ostringstream os;
  auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d) {
    os << a << std::string(width - std::min(width, a.size()), ' ') << " | " << b
       << std::string(8 - std::min<std::size_t>(8, b.size()), ' ') << " | " << c
       << std::string(15 - std::min<std::size_t>(15, c.size()), ' ') << " | " << d << "\n";
  };
  row("Model", "EER", "BPCER@APCER=1%", "BPCER@APCER=20%");
  os << std::string(width, '-') << "-+-" << std::string(8, '-') << "-+-" << std::string(15, '-') << "-+-"
     << std::string(15, '-') << "\n";
  row(label, fmt("%.2f", 100.0 * report.eer), at("0.01"), at("0.20"));
  return os.str();
}

}  // namespace idistill
