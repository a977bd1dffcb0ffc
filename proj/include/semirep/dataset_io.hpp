#pragma once

#include <iosfwd>
#include <string>

#include "semirep/cluster_data.hpp"

namespace semirep {

// 17-significant-digit decimal text; parsing it back recovers the same double.
[[nodiscard]] std::string format_full(double value);

// CSV schema, one row per (cluster, position, visit) slot:
//   cluster_id, position_j (1..m), visit_k (1..R), delta, y, z, x1..xp
// The y field is empty on unobserved clusters; z repeats within a position.
void write_dataset(std::ostream& out, const ClusterDataset& dataset);
void write_dataset(const std::string& path, const ClusterDataset& dataset);

// Parses and validates the schema above. Rows may arrive in any order; they
// are normalized to (cluster_id, position, visit). Violations raise errors
// naming the row (1-based, header = line 1) and the broken rule:
//   parse-error        malformed header, token, or non-finite number
//   lattice-violation  a cluster misses or repeats a (position, visit) pair
//   z-inconsistency    z varies within one (cluster, position)
//   delta-inconsistency delta varies within a cluster, or y presence
//                       disagrees with delta
[[nodiscard]] ClusterDataset load_dataset(std::istream& in);
[[nodiscard]] ClusterDataset load_dataset(const std::string& path);

}  // namespace semirep
