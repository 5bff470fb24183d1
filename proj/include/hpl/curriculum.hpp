#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpl/prefgen.hpp"

namespace hpl {

/// Bucket edges for the 3x3 curriculum matrix.
///
/// Length axis (edges l0 < l1 < l2):  L=1 for l0 < len <= l1,
/// L=2 for l1 < len <= l2, L=3 beyond. Difficulty axis (edges
/// d0 > d1 > d2 >= 0 over the reward margin dR): D=1 for dR >= d1,
/// D=2 for d2 <= dR < d1, D=3 for 0 < dR < d2. d0 caps the margin:
/// pairs above it (or outside (0, d0], or with length outside (l0, inf))
/// are data errors.
struct CurriculumThresholds {
    std::array<int, 3> length_edges{0, 3, 6};
    std::array<double, 3> difficulty_edges{1.0, 0.7, 0.4};

    void validate() const;
};

/// 1-based (L, D) bucket coordinates.
struct BucketIndex {
    int L = 1;
    int D = 1;
    bool operator==(const BucketIndex&) const = default;
};

BucketIndex assign_bucket(const GroupPair& pair, const CurriculumThresholds& t);

/// Scored group pairs arranged into the 3x3 (length, difficulty) matrix.
struct CurriculumMatrix {
    CurriculumThresholds thresholds;
    /// buckets[L-1][D-1]
    std::array<std::array<std::vector<GroupPair>, 3>, 3> buckets;

    std::size_t total() const;
    const std::vector<GroupPair>& at(int L, int D) const;
};

CurriculumMatrix build_matrix(std::vector<GroupPair> pairs,
                              const CurriculumThresholds& thresholds);

/// Progressive activation order over the matrix.
enum class CurriculumMode { staged, all_at_once, length_only, difficulty_only };

std::string to_string(CurriculumMode m);
CurriculumMode curriculum_mode_from_string(const std::string& s);

/// Buckets active during phase s (1..3) under a mode. The default staged
/// schedule activates {(1,1)}, then {(1,1),(1,2),(2,1)}, then all nine.
std::vector<BucketIndex> active_buckets(CurriculumMode mode, int phase);

/// Concatenation of the active buckets' pairs for phase s (row-major over
/// (L, D) in activation order).
std::vector<GroupPair> phase_dataset(const CurriculumMatrix& m, int phase,
                                     CurriculumMode mode = CurriculumMode::staged);

/// Per-cell counts plus thresholds and the phase plan, for reports.
nlohmann::json matrix_summary(const CurriculumMatrix& m);

} // namespace hpl
