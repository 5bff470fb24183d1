#include "hpl/curriculum.hpp"

#include "hpl/errors.hpp"

namespace hpl {

void CurriculumThresholds::validate() const {
    if (!(length_edges[0] < length_edges[1] && length_edges[1] < length_edges[2]))
        throw ConfigError("length edges must be strictly increasing");
    if (!(difficulty_edges[0] > difficulty_edges[1] &&
          difficulty_edges[1] > difficulty_edges[2] && difficulty_edges[2] >= 0.0))
        throw ConfigError("difficulty edges must be strictly decreasing and nonnegative");
}

BucketIndex assign_bucket(const GroupPair& pair, const CurriculumThresholds& t) {
    t.validate();
    if (!pair.delta_r)
        throw UsageError("assign_bucket: pair has no reward margin (unscored)");
    const int len = pair.length;
    const double dr = *pair.delta_r;
    const auto& [l0, l1, l2] = t.length_edges;
    const auto& [d0, d1, d2] = t.difficulty_edges;
    if (len <= l0)
        throw UsageError("assign_bucket: group length " + std::to_string(len) +
                         " at or below the lower edge " + std::to_string(l0));
    if (dr <= 0.0)
        throw UsageError("assign_bucket: non-positive reward margin " + std::to_string(dr));
    if (dr > d0)
        throw UsageError("assign_bucket: reward margin " + std::to_string(dr) +
                         " exceeds the cap " + std::to_string(d0));
    BucketIndex b;
    b.L = len <= l1 ? 1 : (len <= l2 ? 2 : 3);
    b.D = dr >= d1 ? 1 : (dr >= d2 ? 2 : 3);
    return b;
}

std::size_t CurriculumMatrix::total() const {
    std::size_t n = 0;
    for (const auto& row : buckets)
        for (const auto& cell : row) n += cell.size();
    return n;
}

const std::vector<GroupPair>& CurriculumMatrix::at(int L, int D) const {
    if (L < 1 || L > 3 || D < 1 || D > 3)
        throw UsageError("bucket coordinates must lie in 1..3");
    return buckets[static_cast<std::size_t>(L - 1)][static_cast<std::size_t>(D - 1)];
}

CurriculumMatrix build_matrix(std::vector<GroupPair> pairs,
                              const CurriculumThresholds& thresholds) {
    thresholds.validate();
    CurriculumMatrix m;
    m.thresholds = thresholds;
    for (auto& p : pairs) {
        const BucketIndex b = assign_bucket(p, thresholds);
        m.buckets[static_cast<std::size_t>(b.L - 1)][static_cast<std::size_t>(b.D - 1)]
            .push_back(std::move(p));
    }
    return m;
}

std::string to_string(CurriculumMode m) {
    switch (m) {
        case CurriculumMode::staged: return "staged";
        case CurriculumMode::all_at_once: return "static";
        case CurriculumMode::length_only: return "length_only";
        case CurriculumMode::difficulty_only: return "difficulty_only";
    }
    throw UsageError("unknown curriculum mode");
}

CurriculumMode curriculum_mode_from_string(const std::string& s) {
    if (s == "staged") return CurriculumMode::staged;
    if (s == "static") return CurriculumMode::all_at_once;
    if (s == "length_only") return CurriculumMode::length_only;
    if (s == "difficulty_only") return CurriculumMode::difficulty_only;
    throw ConfigError("unknown curriculum mode '" + s + "'");
}

std::vector<BucketIndex> active_buckets(CurriculumMode mode, int phase) {
    if (phase < 1 || phase > 3) throw UsageError("phase must lie in 1..3");
    std::vector<BucketIndex> out;
    auto all_nine = [&] {
        for (int L = 1; L <= 3; ++L)
            for (int D = 1; D <= 3; ++D) out.push_back(BucketIndex{L, D});
    };
    switch (mode) {
        case CurriculumMode::staged:
            if (phase == 1) {
                out = {BucketIndex{1, 1}};
            } else if (phase == 2) {
                out = {BucketIndex{1, 1}, BucketIndex{1, 2}, BucketIndex{2, 1}};
            } else {
                all_nine();
            }
            break;
        case CurriculumMode::all_at_once:
            all_nine();
            break;
        case CurriculumMode::length_only:
            for (int L = 1; L <= phase; ++L)
                for (int D = 1; D <= 3; ++D) out.push_back(BucketIndex{L, D});
            break;
        case CurriculumMode::difficulty_only:
            for (int L = 1; L <= 3; ++L)
                for (int D = 1; D <= phase; ++D) out.push_back(BucketIndex{L, D});
            break;
    }
    return out;
}

std::vector<GroupPair> phase_dataset(const CurriculumMatrix& m, int phase,
                                     CurriculumMode mode) {
    std::vector<GroupPair> out;
    for (const auto& b : active_buckets(mode, phase)) {
        const auto& cell = m.at(b.L, b.D);
        out.insert(out.end(), cell.begin(), cell.end());
    }
    return out;
}

nlohmann::json matrix_summary(const CurriculumMatrix& m) {
    nlohmann::json counts = nlohmann::json::array();
    for (int L = 1; L <= 3; ++L) {
        nlohmann::json row = nlohmann::json::array();
        for (int D = 1; D <= 3; ++D) row.push_back(m.at(L, D).size());
        counts.push_back(std::move(row));
    }
    nlohmann::json phases;
    for (int phase = 1; phase <= 3; ++phase) {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& b : active_buckets(CurriculumMode::staged, phase))
            cells.push_back({b.L, b.D});
        phases[std::to_string(phase)] = std::move(cells);
    }
    return nlohmann::json{
        {"thresholds",
         {{"length", m.thresholds.length_edges},
          {"difficulty", m.thresholds.difficulty_edges}}},
        {"counts", std::move(counts)},
        {"total", m.total()},
        {"phases", std::move(phases)}};
}

} // namespace hpl
