#include "lrb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "lrb/errors.hpp"

namespace lrb {

ClientEvaluation evaluate_client(const Matrix& probabilities, const std::vector<int>& labels) {
  if (probabilities.rows != labels.size()) {
    throw ShapeError("evaluate_client: " + std::to_string(labels.size()) + " labels for " +
                     probabilities.shape_str() + " probabilities");
  }
  if (probabilities.rows == 0) throw DataError("evaluate_client: no samples");

  ClientEvaluation ev;
  ev.confidences.resize(probabilities.rows);
  ev.correctness.resize(probabilities.rows);
  double hits = 0.0;
  for (std::size_t i = 0; i < probabilities.rows; ++i) {
    const double* row = &probabilities.data[i * probabilities.cols];
    double sum = 0.0;
    std::size_t best = 0;
    for (std::size_t c = 0; c < probabilities.cols; ++c) {
      sum += row[c];
      if (row[c] > row[best]) best = c;  // ties keep the lowest index
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw NumericError("evaluate_client: row " + std::to_string(i) + " sums to " +
                         std::to_string(sum) + ", expected 1");
    }
    ev.confidences[i] = row[best];
    ev.correctness[i] = (static_cast<int>(best) == labels[i]) ? 1.0 : 0.0;
    hits += ev.correctness[i];
  }
  ev.accuracy = hits / static_cast<double>(probabilities.rows);
  return ev;
}

std::vector<ReliabilityBin> reliability_bins(const std::vector<double>& confidences,
                                             const std::vector<double>& correctness,
                                             std::size_t num_bins) {
  if (num_bins == 0) throw ConfigError("reliability_bins: need at least one bin");
  if (confidences.empty()) throw DataError("reliability_bins: empty inputs");
  if (confidences.size() != correctness.size()) {
    throw ShapeError("reliability_bins: " + std::to_string(confidences.size()) +
                     " confidences vs " + std::to_string(correctness.size()) +
                     " correctness values");
  }
  std::vector<ReliabilityBin> bins(num_bins);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    // bins are (lo, hi]; a confidence of exactly 0 goes to the first bin
    std::size_t b = 0;
    if (c > 0.0) {
      b = static_cast<std::size_t>(std::ceil(c * static_cast<double>(num_bins))) - 1;
      b = std::min(b, num_bins - 1);
    }
    bins[b].count += 1;
    bins[b].mean_conf += c;
    bins[b].acc += correctness[i];
  }
  for (auto& bin : bins) {
    if (bin.count > 0) {
      bin.mean_conf /= static_cast<double>(bin.count);
      bin.acc /= static_cast<double>(bin.count);
    }
  }
  return bins;
}

double ece(const std::vector<double>& confidences, const std::vector<double>& correctness,
           std::size_t num_bins) {
  const auto bins = reliability_bins(confidences, correctness, num_bins);
  const double n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (const auto& bin : bins) {
    if (bin.count == 0) continue;
    total += (static_cast<double>(bin.count) / n) * std::abs(bin.acc - bin.mean_conf);
  }
  return total;
}

double mce(const std::vector<double>& confidences, const std::vector<double>& correctness,
           std::size_t num_bins) {
  const auto bins = reliability_bins(confidences, correctness, num_bins);
  double worst = 0.0;
  for (const auto& bin : bins) {
    if (bin.count == 0) continue;
    worst = std::max(worst, std::abs(bin.acc - bin.mean_conf));
  }
  return worst;
}

CalibrationReport fleet_report(std::vector<ClientReport> clients) {
  if (clients.empty()) throw DataError("fleet_report: need at least one client");
  CalibrationReport report;
  report.clients = std::move(clients);
  double acc = 0.0, ece_sum = 0.0;
  report.w_ece = -1.0;
  for (const auto& c : report.clients) {
    acc += c.accuracy;
    ece_sum += c.ece;
    if (c.ece > report.w_ece) {
      report.w_ece = c.ece;
      report.worst_client = c.id;
    }
  }
  const double n = static_cast<double>(report.clients.size());
  report.mean_accuracy = acc / n;
  report.a_ece = ece_sum / n;
  return report;
}

namespace {

nlohmann::json bins_to_json(const std::vector<ReliabilityBin>& bins) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : bins) {
    arr.push_back({{"count", b.count}, {"mean_conf", b.mean_conf}, {"acc", b.acc}});
  }
  return arr;
}

std::vector<ReliabilityBin> bins_from_json(const nlohmann::json& arr) {
  std::vector<ReliabilityBin> bins;
  for (const auto& j : arr) {
    bins.push_back({j.at("count").get<std::size_t>(), j.at("mean_conf").get<double>(),
                    j.at("acc").get<double>()});
  }
  return bins;
}

}  // namespace

std::string report_to_json(const CalibrationReport& report) {
  nlohmann::json j;
  j["clients"] = nlohmann::json::array();
  for (const auto& c : report.clients) {
    j["clients"].push_back({{"id", c.id},
                            {"accuracy", c.accuracy},
                            {"ece", c.ece},
                            {"mce", c.mce},
                            {"bins", bins_to_json(c.bins)}});
  }
  j["mean_accuracy"] = report.mean_accuracy;
  j["a_ece"] = report.a_ece;
  j["w_ece"] = report.w_ece;
  j["worst_client"] = report.worst_client;
  return j.dump(2);
}

CalibrationReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  CalibrationReport report;
  for (const auto& cj : j.at("clients")) {
    ClientReport c;
    c.id = cj.at("id").get<int>();
    c.accuracy = cj.at("accuracy").get<double>();
    c.ece = cj.at("ece").get<double>();
    c.mce = cj.at("mce").get<double>();
    c.bins = bins_from_json(cj.at("bins"));
    report.clients.push_back(std::move(c));
  }
  report.mean_accuracy = j.at("mean_accuracy").get<double>();
  report.a_ece = j.at("a_ece").get<double>();
  report.w_ece = j.at("w_ece").get<double>();
  report.worst_client = j.at("worst_client").get<int>();
  return report;
}

std::string reliability_csv(const std::vector<ReliabilityBin>& bins) {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,count,mean_conf,acc\n";
  const double width = 1.0 / static_cast<double>(bins.size());
  for (std::size_t b = 0; b < bins.size(); ++b) {
    out << b * width << ',' << (b + 1) * width << ',' << bins[b].count << ','
        << bins[b].mean_conf << ',' << bins[b].acc << '\n';
  }
  return out.str();
}

}  // namespace lrb
