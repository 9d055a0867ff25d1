#include "dstcan/eval.hpp"

#include <fstream>
#include <ostream>

#include "dstcan/errors.hpp"

namespace dstcan::eval {

Cases split_cases(std::span<const LabeledSample> samples) {
  Cases c;
  for (const auto& s : samples) (s.human == s.gt ? c.consensus : c.conflict).push_back(s);
  return c;
}

std::string to_string(Reference r) { return r == Reference::kGt ? "gt" : "human"; }

Reference reference_from_string(const std::string& s) {
  if (s == "gt") return Reference::kGt;
  if (s == "human") return Reference::kHuman;
  throw UsageError("reference must be 'gt' or 'human', got '" + s + "'");
}

const ManeuverLabel& reference_label(const LabeledSample& s, Reference r) {
  return r == Reference::kGt ? s.gt : s.human;
}

namespace {

const ManeuverLabel& prediction(const LabeledSample& s) {
  if (!s.predicted) throw UsageError("sample " + std::to_string(s.sample_id) + " has no prediction");
  return *s.predicted;
}

double percent(std::int64_t hits, std::int64_t n) { return 100.0 * static_cast<double>(hits) / static_cast<double>(n); }

}  // namespace

std::optional<HeadAccuracy> accuracy(std::span<const LabeledSample> samples, Reference reference) {
  if (samples.empty()) return std::nullopt;
  std::int64_t lat = 0, lon = 0;
  for (const auto& s : samples) {
    const auto& p = prediction(s);
    const auto& r = reference_label(s, reference);
    lat += p.lateral == r.lateral ? 1 : 0;
    lon += p.longitudinal == r.longitudinal ? 1 : 0;
  }
  const auto n = static_cast<std::int64_t>(samples.size());
  return HeadAccuracy{percent(lat, n), percent(lon, n)};
}

ConfusionMatrix confusion(std::span<const LabeledSample> samples, Reference reference) {
  ConfusionMatrix m{};
  for (const auto& s : samples) {
    const auto& p = prediction(s);
    const auto& r = reference_label(s, reference);
    m[static_cast<std::size_t>(r.lateral)][static_cast<std::size_t>(p.lateral)] += 1;
    m[kNumLateral + static_cast<std::size_t>(r.longitudinal)][kNumLateral + static_cast<std::size_t>(p.longitudinal)] +=
        1;
  }
  return m;
}

namespace {

SubsetReport subset(std::span<const LabeledSample> samples, Reference reference) {
  return {static_cast<std::int64_t>(samples.size()), accuracy(samples, reference), confusion(samples, reference)};
}

template <typename Agree, typename Hit>
HeadSplit head_split(std::span<const LabeledSample> samples, Agree agree, Hit hit) {
  HeadSplit h;
  std::int64_t con_hits = 0, conf_hits = 0;
  for (const auto& s : samples) {
    if (agree(s)) {
      ++h.consensus_count;
      con_hits += hit(s) ? 1 : 0;
    } else {
      ++h.conflict_count;
      conf_hits += hit(s) ? 1 : 0;
    }
  }
  if (h.consensus_count > 0) h.consensus_accuracy = percent(con_hits, h.consensus_count);
  if (h.conflict_count > 0) h.conflict_accuracy = percent(conf_hits, h.conflict_count);
  return h;
}

}  // namespace

EvalReport make_report(std::span<const LabeledSample> samples, const ReportConfig& config) {
  EvalReport r;
  r.config = config;
  const auto ref = config.reference;
  const auto cases = split_cases(samples);
  r.overall = subset(samples, ref);
  r.consensus = subset(cases.consensus, ref);
  r.conflict = subset(cases.conflict, ref);
  r.lateral = head_split(
      samples, [](const LabeledSample& s) { return s.human.lateral == s.gt.lateral; },
      [ref](const LabeledSample& s) { return prediction(s).lateral == reference_label(s, ref).lateral; });
  r.longitudinal = head_split(
      samples, [](const LabeledSample& s) { return s.human.longitudinal == s.gt.longitudinal; },
      [ref](const LabeledSample& s) { return prediction(s).longitudinal == reference_label(s, ref).longitudinal; });
  return r;
}

// ---------------------------------------------------------------------------
// Serialization. Absent values are written as null.

namespace {

using nlohmann::json;

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json subset_json(const SubsetReport& s) {
  json matrix = json::array();
  for (const auto& row : s.matrix) matrix.push_back(row);
  json j = {{"count", s.count}, {"matrix", matrix}};
  if (s.accuracy) {
    j["lateral_accuracy"] = s.accuracy->lateral;
    j["longitudinal_accuracy"] = s.accuracy->longitudinal;
  } else {
    j["lateral_accuracy"] = nullptr;
    j["longitudinal_accuracy"] = nullptr;
  }
  return j;
}

SubsetReport subset_from(const json& j) {
  SubsetReport s;
  s.count = j.at("count").get<std::int64_t>();
  const auto lat = opt_from(j.at("lateral_accuracy"));
  const auto lon = opt_from(j.at("longitudinal_accuracy"));
  if (lat.has_value() != lon.has_value()) throw DataError("report subset has only one head accuracy");
  if (lat) s.accuracy = HeadAccuracy{*lat, *lon};
  const auto& m = j.at("matrix");
  if (m.size() != kMatrixClasses) throw DataError("confusion matrix must be 5x5");
  for (std::size_t r = 0; r < kMatrixClasses; ++r) {
    if (m[r].size() != kMatrixClasses) throw DataError("confusion matrix must be 5x5");
    for (std::size_t c = 0; c < kMatrixClasses; ++c) s.matrix[r][c] = m[r][c].get<std::int64_t>();
  }
  return s;
}

json head_json(const HeadSplit& h) {
  return {{"consensus_count", h.consensus_count},
          {"consensus_accuracy", opt_json(h.consensus_accuracy)},
          {"conflict_count", h.conflict_count},
          {"conflict_accuracy", opt_json(h.conflict_accuracy)}};
}

HeadSplit head_from(const json& j) {
  return {j.at("consensus_count").get<std::int64_t>(), opt_from(j.at("consensus_accuracy")),
          j.at("conflict_count").get<std::int64_t>(), opt_from(j.at("conflict_accuracy"))};
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  json classes = json::array();
  for (const char* name : kClassNames) classes.push_back(name);
  return {
      {"format", "dstcan-eval-report"},
      {"version", 1},
      {"config",
       {{"horizon", r.config.horizon},
        {"label_source", r.config.label_source},
        {"reference", to_string(r.config.reference)},
        {"split", r.config.split},
        {"checkpoint", r.config.checkpoint},
        {"loss_log", r.config.loss_log}}},
      {"classes", classes},
      {"overall", subset_json(r.overall)},
      {"consensus", subset_json(r.consensus)},
      {"conflict", subset_json(r.conflict)},
      {"per_head", {{"lateral", head_json(r.lateral)}, {"longitudinal", head_json(r.longitudinal)}}},
  };
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "dstcan-eval-report") throw DataError("not an evaluation report");
    EvalReport r;
    const auto& c = j.at("config");
    r.config.horizon = c.at("horizon").get<int>();
    r.config.label_source = c.at("label_source").get<std::string>();
    r.config.reference = reference_from_string(c.at("reference").get<std::string>());
    r.config.split = c.at("split").get<std::string>();
    r.config.checkpoint = c.at("checkpoint").get<std::string>();
    r.config.loss_log = c.at("loss_log").get<std::string>();
    r.overall = subset_from(j.at("overall"));
    r.consensus = subset_from(j.at("consensus"));
    r.conflict = subset_from(j.at("conflict"));
    r.lateral = head_from(j.at("per_head").at("lateral"));
    r.longitudinal = head_from(j.at("per_head").at("longitudinal"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

void emit_report(const EvalReport& report, std::ostream& out) { out << to_json(report).dump(2) << '\n'; }

void emit_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write report " + path);
  emit_report(report, out);
  if (!out) throw DataError("failed writing report " + path);
}

EvalReport parse_report(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
  return report_from_json(j);
}

EvalReport parse_report_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path);
  return parse_report(in);
}

void write_matrices_csv(const EvalReport& report, std::ostream& out) {
  auto block = [&out](const char* name, const SubsetReport& s) {
    out << name;
    for (const char* c : kClassNames) out << ',' << c;
    out << '\n';
    for (int r = 0; r < kMatrixClasses; ++r) {
      out << kClassNames[r];
      for (int c = 0; c < kMatrixClasses; ++c) out << ',' << s.matrix[r][c];
      out << '\n';
    }
  };
  block("consensus", report.consensus);
  out << '\n';
  block("conflict", report.conflict);
}

void write_matrices_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  write_matrices_csv(report, out);
}

}  // namespace dstcan::eval
