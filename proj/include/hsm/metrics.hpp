#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace hsm {

struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0.0;   // nats per target token, averaged over the epoch
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;      // wall clock of the training pass

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

void to_json(nlohmann::json& j, const MetricsRecord& r);
void from_json(const nlohmann::json& j, MetricsRecord& r);

inline constexpr const char* kMetricsCsvHeader = "epoch,train_loss,val_loss,val_accuracy,seconds";

// Losses and accuracy use 17 significant digits so a CSV round-trips exactly.
std::string metrics_csv_row(const MetricsRecord& r);
std::string metrics_jsonl_row(const MetricsRecord& r);

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);
std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path);
// Dispatches on extension (.csv, otherwise JSON lines).
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);
void write_metrics_jsonl(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);

struct LabelledRun {
  std::string label;
  std::vector<MetricsRecord> records;
};

// run,epoch,train_loss,val_loss,val_accuracy,seconds with one row per
// (run, epoch), values printed exactly as metrics_csv_row does.
std::string merge_plot_data(const std::vector<LabelledRun>& runs);

}  // namespace hsm
