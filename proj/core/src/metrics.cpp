// Copyright 2026 The ssdlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssdlab/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ssdlab {

namespace {

using Json = nlohmann::ordered_json;

Json optional_number(const std::optional<double>& v) { return v.has_value() ? Json(*v) : Json(nullptr); }

std::optional<double> read_optional(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

Json event_to_json(const TransitionEvent& e) {
  Json j;
  j["step"] = e.step;
  j["kind"] = to_string(e.kind);
  j["similarity"] = optional_number(e.similarity);
  j["sparse_budget"] = e.sparse_budget;
  j["loss_before"] = optional_number(e.loss_before);
  j["loss_after"] = optional_number(e.loss_after);
  return j;
}

TransitionKind kind_from_string(const std::string& s) {
  if (s == "to_sparse") return TransitionKind::kToSparse;
  if (s == "to_dense") return TransitionKind::kToDense;
  if (s == "to_final_dense") return TransitionKind::kToFinalDense;
  throw std::invalid_argument("unknown transition kind '" + s + "'");
}

TransitionEvent event_from_json(const nlohmann::json& j) {
  TransitionEvent e;
  e.step = j.at("step").get<std::uint64_t>();
  e.kind = kind_from_string(j.at("kind").get<std::string>());
  e.similarity = read_optional(j, "similarity");
  e.sparse_budget = j.at("sparse_budget").get<std::uint64_t>();
  e.loss_before = read_optional(j, "loss_before");
  e.loss_after = read_optional(j, "loss_after");
  return e;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string("metrics: non-finite ") + what);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

MetricsFormat metrics_format_from_string(const std::string& s) {
  if (s == "csv") return MetricsFormat::kCsv;
  if (s == "jsonl") return MetricsFormat::kJsonLines;
  throw std::invalid_argument("unknown metrics format '" + s + "' (expected csv or jsonl)");
}

void validate_metrics(const std::vector<MetricsRecord>& records) {
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].step <= records[i - 1].step) throw std::invalid_argument("metrics: steps must strictly increase");
    if (records[i].flops < records[i - 1].flops) throw std::invalid_argument("metrics: FLOPs must not decrease");
  }
}

std::string metrics_to_csv(const std::vector<MetricsRecord>& records, std::size_t n_layers) {
  std::string out = "step,phase,loss,ppl";
  for (std::size_t l = 0; l < n_layers; ++l) out += ",sparsity_layer_" + std::to_string(l);
  out += ",similarity,flops,lr\n";
  for (const auto& r : records) {
    if (!r.sparsity.empty() && r.sparsity.size() != n_layers) {
      throw std::invalid_argument("metrics: record has " + std::to_string(r.sparsity.size()) + " sparsity values, expected " +
                                  std::to_string(n_layers));
    }
    out += std::to_string(r.step) + "," + to_string(r.phase) + "," + format_double(r.loss) + ",";
    if (r.ppl) out += format_double(*r.ppl);
    for (std::size_t l = 0; l < n_layers; ++l) {
      out += ",";
      if (!r.sparsity.empty()) out += format_double(r.sparsity[l]);
    }
    out += ",";
    if (r.similarity) out += format_double(*r.similarity);
    out += "," + std::to_string(r.flops) + "," + format_double(r.lr) + "\n";
  }
  return out;
}

std::string metrics_record_to_json(const MetricsRecord& r) {
  check_finite(r.loss, "loss");
  check_finite(r.lr, "learning rate");
  Json j;
  j["step"] = r.step;
  j["phase"] = to_string(r.phase);
  j["loss"] = r.loss;
  j["ppl"] = optional_number(r.ppl);
  j["sparsity"] = r.sparsity;
  j["similarity"] = optional_number(r.similarity);
  j["flops"] = r.flops;
  j["lr"] = r.lr;
  auto events = Json::array();
  for (const auto& e : r.events) events.push_back(event_to_json(e));
  j["events"] = std::move(events);
  return j.dump();
}

std::string metrics_to_jsonl(const std::vector<MetricsRecord>& records) {
  std::string out;
  for (const auto& r : records) out += metrics_record_to_json(r) + "\n";
  return out;
}

std::vector<MetricsRecord> parse_metrics_jsonl(std::string_view text) {
  std::vector<MetricsRecord> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MetricsRecord r;
      r.step = j.at("step").get<std::uint64_t>();
      r.phase = phase_from_string(j.at("phase").get<std::string>());
      r.loss = j.at("loss").get<double>();
      r.ppl = read_optional(j, "ppl");
      r.sparsity = j.at("sparsity").get<std::vector<double>>();
      r.similarity = read_optional(j, "similarity");
      r.flops = j.at("flops").get<std::uint64_t>();
      r.lr = j.at("lr").get<double>();
      for (const auto& e : j.at("events")) r.events.push_back(event_from_json(e));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("metrics line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void export_metrics(const std::vector<MetricsRecord>& records, std::size_t n_layers, MetricsFormat format,
                    const std::filesystem::path& path) {
  validate_metrics(records);
  write_file(path, format == MetricsFormat::kCsv ? metrics_to_csv(records, n_layers) : metrics_to_jsonl(records));
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read metrics file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_metrics_jsonl(text);
}

}  // namespace ssdlab
