#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace spkmoco {

struct TrialScores {
  std::vector<double> target;
  std::vector<double> nontarget;
};

// One point of the detection staircase. A trial is accepted when
// score >= threshold, so P_miss counts targets below the threshold and P_fa
// counts nontargets at or above it.
struct OperatingPoint {
  double threshold;
  double p_miss;
  double p_fa;
};

// Thresholds are every distinct score in increasing order followed by +inf
// (reject all). The first point is accept-all.
std::vector<OperatingPoint> staircase(const TrialScores& scores);

struct EerResult {
  double eer;
  double threshold;
};

// First staircase point j with P_miss >= P_fa. An exact tie gives the EER
// directly; otherwise it is interpolated linearly between points j-1 and j.
// The reported threshold is that of point j.
EerResult compute_eer(const TrialScores& scores);

struct DcfResult {
  double min_dcf;  // normalized by the best trivial decision
  double threshold;
};

DcfResult compute_min_dcf(const TrialScores& scores, double p_target, double c_miss = 1.0,
                          double c_fa = 1.0);

struct DetPoint {
  double threshold;
  double p_fa;
  double p_miss;
  double probit_fa;    // Φ⁻¹(p_fa), ±inf at the ends
  double probit_miss;
};

std::vector<DetPoint> det_points(const TrialScores& scores);
// Columns: threshold p_fa p_miss probit_fa probit_miss.
void write_det_table(std::ostream& out, const std::vector<DetPoint>& points);

// Trial file lines: "enroll-id test-id target|nontarget".
struct Trial {
  std::string enroll;
  std::string test;
  bool target;
};

std::vector<Trial> parse_trials(std::istream& in);
std::vector<Trial> read_trials(const std::filesystem::path& path);

// Score file lines: "enroll-id test-id score".
struct ScoredTrial {
  std::string enroll;
  std::string test;
  double score;
};

void write_scores(std::ostream& out, const std::vector<ScoredTrial>& scores);
void write_scores(const std::filesystem::path& path, const std::vector<ScoredTrial>& scores);
std::vector<ScoredTrial> parse_scores(std::istream& in);
std::vector<ScoredTrial> read_scores(const std::filesystem::path& path);

// Labels scores through the trial list. A score line whose pair is not in
// the list, or a pair listed with both labels, is a DataError.
TrialScores label_scores(const std::vector<ScoredTrial>& scores, const std::vector<Trial>& trials);

struct MetricsReport {
  double eer;
  double eer_threshold;
  double min_dcf_01;   // p_target = 0.01
  double min_dcf_001;  // p_target = 0.001
  std::size_t n_target;
  std::size_t n_nontarget;
};

MetricsReport evaluate_scores(const TrialScores& scores, double c_miss = 1.0, double c_fa = 1.0);
void write_report(std::ostream& out, const MetricsReport& report);

}  // namespace spkmoco
