#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dstcan/maneuver.hpp"

// Consensus / conflict evaluation of predicted manoeuvres.
namespace dstcan::eval {

struct LabeledSample {
  std::uint64_t sample_id = 0;
  ManeuverLabel human;
  ManeuverLabel gt;
  std::optional<ManeuverLabel> predicted;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Cases {
  std::vector<LabeledSample> consensus;  // human == gt on both heads
  std::vector<LabeledSample> conflict;
};

Cases split_cases(std::span<const LabeledSample> samples);

enum class Reference { kGt, kHuman };
std::string to_string(Reference r);
Reference reference_from_string(const std::string& s);

const ManeuverLabel& reference_label(const LabeledSample& s, Reference r);

struct HeadAccuracy {
  double lateral = 0.0;  // percent
  double longitudinal = 0.0;
  friend bool operator==(const HeadAccuracy&, const HeadAccuracy&) = default;
};

// Per-head match percentage; nullopt for an empty set. Throws UsageError when
// a sample has no prediction.
std::optional<HeadAccuracy> accuracy(std::span<const LabeledSample> samples, Reference reference = Reference::kGt);

// Class order of the matrix rows and columns.
inline constexpr int kMatrixClasses = 5;
inline constexpr std::array<const char*, kMatrixClasses> kClassNames = {"Same lane", "Take left", "Take right",
                                                                        "Cruise", "Brake"};
using ConfusionMatrix = std::array<std::array<std::int64_t, kMatrixClasses>, kMatrixClasses>;

// Rows are the reference decision, columns the prediction. Lateral classes fill
// the upper-left 3x3 block and longitudinal classes the lower-right 2x2.
ConfusionMatrix confusion(std::span<const LabeledSample> samples, Reference reference = Reference::kGt);

struct SubsetReport {
  std::int64_t count = 0;
  std::optional<HeadAccuracy> accuracy;
  ConfusionMatrix matrix{};
  friend bool operator==(const SubsetReport&, const SubsetReport&) = default;
};

// Accuracy of one head on the samples whose human and GT labels agree (or not) on that head.
struct HeadSplit {
  std::int64_t consensus_count = 0;
  std::optional<double> consensus_accuracy;
  std::int64_t conflict_count = 0;
  std::optional<double> conflict_accuracy;
  friend bool operator==(const HeadSplit&, const HeadSplit&) = default;
};

struct ReportConfig {
  int horizon = 30;
  std::string label_source = "gt";
  Reference reference = Reference::kGt;
  std::string split = "test";
  std::string checkpoint;
  std::string loss_log;
  friend bool operator==(const ReportConfig&, const ReportConfig&) = default;
};

struct EvalReport {
  ReportConfig config;
  SubsetReport overall;
  SubsetReport consensus;
  SubsetReport conflict;
  HeadSplit lateral;
  HeadSplit longitudinal;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport make_report(std::span<const LabeledSample> samples, const ReportConfig& config);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& doc);
void emit_report(const EvalReport& report, std::ostream& out);
void emit_report(const EvalReport& report, const std::string& path);
EvalReport parse_report(std::istream& in);
EvalReport parse_report_file(const std::string& path);

// Both matrices as delimited text, one block per subset.
void write_matrices_csv(const EvalReport& report, std::ostream& out);
void write_matrices_csv(const EvalReport& report, const std::string& path);

}  // namespace dstcan::eval
