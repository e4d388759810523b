#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lrb/matrix.hpp"

namespace lrb {

struct ClientEvaluation {
  double accuracy = 0.0;
  std::vector<double> confidences;  // max predicted probability per sample
  std::vector<double> correctness;  // 1.0 when the argmax hits the label
};

/// Top-1 evaluation of a probability matrix. Rows must sum to one within
/// 1e-6; argmax ties break toward the lowest class index.
ClientEvaluation evaluate_client(const Matrix& probabilities, const std::vector<int>& labels);

struct ReliabilityBin {
  std::size_t count = 0;
  double mean_conf = 0.0;
  double acc = 0.0;
};

/// Equal-width bins over (0, 1]; a confidence of exactly 0 lands in bin 1.
std::vector<ReliabilityBin> reliability_bins(const std::vector<double>& confidences,
                                             const std::vector<double>& correctness,
                                             std::size_t num_bins);

/// Expected calibration error: bin-weighted mean |accuracy - confidence|.
double ece(const std::vector<double>& confidences, const std::vector<double>& correctness,
           std::size_t num_bins);

/// Maximum calibration error: the largest per-bin gap over non-empty bins.
double mce(const std::vector<double>& confidences, const std::vector<double>& correctness,
           std::size_t num_bins);

struct ClientReport {
  int id = 0;
  double accuracy = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  std::vector<ReliabilityBin> bins;
};

struct CalibrationReport {
  std::vector<ClientReport> clients;
  double mean_accuracy = 0.0;
  double a_ece = 0.0;  // mean ECE over clients
  double w_ece = 0.0;  // worst (max) ECE over clients
  int worst_client = -1;
};

CalibrationReport fleet_report(std::vector<ClientReport> clients);

std::string report_to_json(const CalibrationReport& report);
CalibrationReport report_from_json(const std::string& text);

/// Plot-ready reliability rows: bin_lo, bin_hi, count, mean_conf, acc.
std::string reliability_csv(const std::vector<ReliabilityBin>& bins);

}  // namespace lrb
