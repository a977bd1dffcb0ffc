#pragma once

#include <string>

#include "json.hpp"
#include "semirep/avar.hpp"
#include "semirep/backfit.hpp"
#include "semirep/simlab.hpp"
#include "semirep/summaries.hpp"

namespace semirep {

// JSON views of the result types. Numbers keep full precision (shortest
// round-trip text), NaN maps to null in both directions, so e.g. a serialized
// fit reloads bit-identically.
[[nodiscard]] nlohmann::json json_array(const Eigen::VectorXd& v);
[[nodiscard]] nlohmann::json json_matrix(const Eigen::MatrixXd& v);  // row-major nested arrays
[[nodiscard]] Eigen::VectorXd vector_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const ModelParams& v);
void from_json(const nlohmann::json& j, ModelParams& v);
void to_json(nlohmann::json& j, const ThetaEstimate& v);
void from_json(const nlohmann::json& j, ThetaEstimate& v);
void to_json(nlohmann::json& j, const BandwidthSelection& v);
void from_json(const nlohmann::json& j, BandwidthSelection& v);
void to_json(nlohmann::json& j, const FitIterationRecord& v);
void from_json(const nlohmann::json& j, FitIterationRecord& v);
void to_json(nlohmann::json& j, const ProfileDiagnostics& v);
void from_json(const nlohmann::json& j, ProfileDiagnostics& v);
void to_json(nlohmann::json& j, const FitResult& v);
void from_json(const nlohmann::json& j, FitResult& v);
void to_json(nlohmann::json& j, const SummaryEstimate& v);
void from_json(const nlohmann::json& j, SummaryEstimate& v);
void to_json(nlohmann::json& j, const BootstrapResult& v);
void from_json(const nlohmann::json& j, BootstrapResult& v);
void to_json(nlohmann::json& j, const PlugInReport& v);    // summary view, one-way
void to_json(nlohmann::json& j, const ExperimentReport& v);  // one-way

// Artifact format: 2-space indent, sorted keys, trailing newline.
[[nodiscard]] std::string dump_json(const nlohmann::json& j);
void write_json(const std::string& path, const nlohmann::json& j);
[[nodiscard]] nlohmann::json read_json(const std::string& path);

}  // namespace semirep
