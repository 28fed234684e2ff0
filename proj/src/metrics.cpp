#include "hsm/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "hsm/errors.hpp"

namespace hsm {

namespace {

std::string num(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::filesystem::path& path, size_t line) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": '" + s + "' is not a number");
  }
}

}  // namespace

void to_json(nlohmann::json& j, const MetricsRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch},
                     {"train_loss", r.train_loss},
                     {"val_loss", r.val_loss},
                     {"val_accuracy", r.val_accuracy},
                     {"seconds", r.seconds}};
}

void from_json(const nlohmann::json& j, MetricsRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.val_accuracy = j.at("val_accuracy").get<double>();
  r.seconds = j.at("seconds").get<double>();
}

std::string metrics_csv_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + "," + num(r.train_loss) + "," + num(r.val_loss) + "," + num(r.val_accuracy) +
         "," + num(r.seconds, "%.6f");
}

std::string metrics_jsonl_row(const MetricsRecord& r) { return nlohmann::json(r).dump(); }

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty metrics file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsCsvHeader) {
    throw ParseError(path.string() + ":1: expected header '" + std::string(kMetricsCsvHeader) + "'");
  }
  std::vector<MetricsRecord> out;
  for (size_t n = 2; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw ParseError(path.string() + ":" + std::to_string(n) + ": expected 5 columns");
    MetricsRecord r;
    r.epoch = static_cast<int>(parse_number(cells[0], path, n));
    r.train_loss = parse_number(cells[1], path, n);
    r.val_loss = parse_number(cells[2], path, n);
    r.val_accuracy = parse_number(cells[3], path, n);
    r.seconds = parse_number(cells[4], path, n);
    out.push_back(r);
  }
  return out;
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  for (size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<MetricsRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? read_metrics_csv(path) : read_metrics_jsonl(path);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kMetricsCsvHeader << "\n";
  for (const auto& r : records) out << metrics_csv_row(r) << "\n";
}

void write_metrics_jsonl(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << metrics_jsonl_row(r) << "\n";
}

std::string merge_plot_data(const std::vector<LabelledRun>& runs) {
  if (runs.empty()) throw UsageError("no metrics to merge");
  std::string out = std::string("run,") + kMetricsCsvHeader + "\n";
  for (const auto& run : runs) {
    if (run.label.find(',') != std::string::npos) throw UsageError("run label '" + run.label + "' contains a comma");
    for (const auto& r : run.records) out += run.label + "," + metrics_csv_row(r) + "\n";
  }
  return out;
}

}  // namespace hsm
