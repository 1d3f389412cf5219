#include "spkmoco/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "spkmoco/errors.hpp"

namespace spkmoco {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_scores(const TrialScores& s) {
  if (s.target.empty() || s.nontarget.empty())
    throw DataError("metrics need at least one target and one nontarget score");
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(s.target) || !finite(s.nontarget)) throw DataError("non-finite score");
}

double probit(double p) {
  if (p <= 0.0) return -kInf;
  if (p >= 1.0) return kInf;
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  for (std::string tok; ss >> tok;) out.push_back(tok);
  return out;
}

bool blank_or_comment(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

std::ifstream open_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

}  // namespace

std::vector<OperatingPoint> staircase(const TrialScores& scores) {
  check_scores(scores);
  std::vector<double> tgt = scores.target, non = scores.nontarget;
  std::sort(tgt.begin(), tgt.end());
  std::sort(non.begin(), non.end());
  const double nt = static_cast<double>(tgt.size()), nn = static_cast<double>(non.size());

  std::vector<OperatingPoint> pts;
  pts.reserve(tgt.size() + non.size() + 1);
  std::size_t i = 0, j = 0;  // targets below / nontargets below the threshold
  while (i < tgt.size() || j < non.size()) {
    double t = kInf;
    if (i < tgt.size()) t = tgt[i];
    if (j < non.size()) t = std::min(t, non[j]);
    pts.push_back({t, static_cast<double>(i) / nt, static_cast<double>(non.size() - j) / nn});
    while (i < tgt.size() && tgt[i] == t) ++i;
    while (j < non.size() && non[j] == t) ++j;
  }
  pts.push_back({kInf, 1.0, 0.0});
  return pts;
}

EerResult compute_eer(const TrialScores& scores) {
  const auto pts = staircase(scores);
  for (std::size_t j = 0; j < pts.size(); ++j) {
    const double d = pts[j].p_miss - pts[j].p_fa;
    if (d < 0.0) continue;
    if (d == 0.0 || j == 0) return {pts[j].p_fa, pts[j].threshold};
    const OperatingPoint& a = pts[j - 1];
    const OperatingPoint& b = pts[j];
    const double da = a.p_miss - a.p_fa;
    const double alpha = -da / (d - da);
    return {a.p_miss + alpha * (b.p_miss - a.p_miss), b.threshold};
  }
  // The reject-all point always satisfies p_miss >= p_fa.
  throw ContractError("EER sweep found no crossing");
}

DcfResult compute_min_dcf(const TrialScores& scores, double p_target, double c_miss, double c_fa) {
  if (!(p_target > 0.0 && p_target < 1.0)) throw ParameterError("p_target must lie in (0, 1)");
  if (!(c_miss > 0.0) || !(c_fa > 0.0)) throw ParameterError("DCF costs must be positive");
  const auto pts = staircase(scores);
  const double wm = c_miss * p_target, wf = c_fa * (1.0 - p_target);
  DcfResult best{kInf, kInf};
  for (const auto& p : pts) {
    const double dcf = wm * p.p_miss + wf * p.p_fa;
    if (dcf < best.min_dcf) best = {dcf, p.threshold};
  }
  best.min_dcf /= std::min(wm, wf);
  return best;
}

std::vector<DetPoint> det_points(const TrialScores& scores) {
  std::vector<DetPoint> out;
  for (const auto& p : staircase(scores))
    out.push_back({p.threshold, p.p_fa, p.p_miss, probit(p.p_fa), probit(p.p_miss)});
  return out;
}

void write_det_table(std::ostream& out, const std::vector<DetPoint>& points) {
  out << "threshold p_fa p_miss probit_fa probit_miss\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : points)
    out << p.threshold << ' ' << p.p_fa << ' ' << p.p_miss << ' ' << p.probit_fa << ' '
        << p.probit_miss << '\n';
}

std::vector<Trial> parse_trials(std::istream& in) {
  std::vector<Trial> trials;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (blank_or_comment(line)) continue;
    const auto tok = split_ws(line);
    if (tok.size() != 3 || (tok[2] != "target" && tok[2] != "nontarget"))
      throw FormatError("trial line " + std::to_string(lineno) +
                        ": expected 'enroll-id test-id target|nontarget'");
    trials.push_back({tok[0], tok[1], tok[2] == "target"});
  }
  return trials;
}

std::vector<Trial> read_trials(const std::filesystem::path& path) {
  auto in = open_text(path);
  return parse_trials(in);
}

void write_scores(std::ostream& out, const std::vector<ScoredTrial>& scores) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& s : scores) out << s.enroll << ' ' << s.test << ' ' << s.score << '\n';
}

void write_scores(const std::filesystem::path& path, const std::vector<ScoredTrial>& scores) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_scores(out, scores);
}

std::vector<ScoredTrial> parse_scores(std::istream& in) {
  std::vector<ScoredTrial> scores;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (blank_or_comment(line)) continue;
    const auto tok = split_ws(line);
    double value = 0.0;
    bool ok = tok.size() == 3;
    if (ok) {
      const auto* first = tok[2].data();
      const auto* last = first + tok[2].size();
      auto [ptr, ec] = std::from_chars(first, last, value);
      ok = ec == std::errc() && ptr == last;
    }
    if (!ok)
      throw FormatError("score line " + std::to_string(lineno) + ": expected 'enroll-id test-id score'");
    scores.push_back({tok[0], tok[1], value});
  }
  return scores;
}

std::vector<ScoredTrial> read_scores(const std::filesystem::path& path) {
  auto in = open_text(path);
  return parse_scores(in);
}

TrialScores label_scores(const std::vector<ScoredTrial>& scores, const std::vector<Trial>& trials) {
  std::map<std::pair<std::string, std::string>, bool> labels;
  for (const auto& t : trials) {
    auto [it, inserted] = labels.try_emplace({t.enroll, t.test}, t.target);
    if (!inserted && it->second != t.target)
      throw DataError("trial " + t.enroll + " " + t.test + " listed with both labels");
  }
  TrialScores out;
  for (const auto& s : scores) {
    auto it = labels.find({s.enroll, s.test});
    if (it == labels.end()) throw DataError("score for unknown trial " + s.enroll + " " + s.test);
    (it->second ? out.target : out.nontarget).push_back(s.score);
  }
  return out;
}

MetricsReport evaluate_scores(const TrialScores& scores, double c_miss, double c_fa) {
  const auto eer = compute_eer(scores);
  return {eer.eer,
          eer.threshold,
          compute_min_dcf(scores, 0.01, c_miss, c_fa).min_dcf,
          compute_min_dcf(scores, 0.001, c_miss, c_fa).min_dcf,
          scores.target.size(),
          scores.nontarget.size()};
}

void write_report(std::ostream& out, const MetricsReport& r) {
  out << std::fixed << std::setprecision(3) << "EER%         " << 100.0 * r.eer << '\n'
      << std::setprecision(4) << "minDCF_0.01  " << r.min_dcf_01 << '\n'
      << "minDCF_0.001 " << r.min_dcf_001 << '\n'
      << std::defaultfloat << "targets      " << r.n_target << '\n'
      << "nontargets   " << r.n_nontarget << '\n';
  out.unsetf(std::ios::floatfield);
}

}  // namespace spkmoco
