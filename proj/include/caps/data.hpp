// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "caps/rng.hpp"

namespace caps::data {

inline constexpr int kFrames = 4;
inline constexpr int kWeeks = 17;
inline constexpr int kClasses = 3;   // inactive=0, active=1, dedicated=2
inline constexpr int kCells = kFrames * kWeeks;
inline constexpr int kLabels = 3;    // low=0, mid=1, high=2
inline constexpr int kUnlabelled = -1;

// Frame order is fixed: morning, afternoon, evening, overnight.
enum Frame : int { kMorning = 0, kAfternoon = 1, kEvening = 2, kOvernight = 3 };

// A student's 4-frame x 17-week grid of 3-valued engagement classes.
struct EngagementSeries {
  std::array<uint8_t, kCells> cells{};  // frame-major: cell(f,w) = f*17+w

  int get(int frame, int week) const { return cells[frame * kWeeks + week]; }
  void set(int frame, int week, int cls);
  bool operator==(const EngagementSeries&) const = default;
};

struct LabelledRecord {
  std::string student_id;
  EngagementSeries x;
  int label = kUnlabelled;  // 0..2, or -1 for unlabelled pools
};

// A cohort D_t. Student ids are unique within a cycle (the privacy unit is
// one learner).
struct LabelledDataset {
  std::string cycle_tag;
  std::vector<LabelledRecord> records;

  size_t size() const { return records.size(); }
  std::array<int, kLabels> label_counts() const;
};

// ---- timestamps ------------------------------------------------------------

// Wall-clock civil time as recorded (RFC 3339 with offset). All bucketing
// (hour of day, date, week) uses the wall clock of the original record.
struct CivilDateTime {
  int year = 1970, month = 1, day = 1;
  int hour = 0, minute = 0, second = 0;
  int utc_offset_minutes = 0;

  long day_index() const;        // days since 1970-01-01 of the wall date
  int second_of_hour() const { return minute * 60 + second; }
};

// Parses "YYYY-MM-DDTHH:MM:SS(Z|+HH:MM|-HH:MM)"; throws config_error on
// malformed input.
CivilDateTime parse_rfc3339(const std::string& s);

struct RawLogEvent {
  std::string student_id;
  CivilDateTime ts;
};

// ---- preprocessing ---------------------------------------------------------

// 05-11 morning, 12-16 afternoon, 17-23 evening, 00-04 overnight.
int frame_of(int hour);

// 0 min -> inactive, 1..15 -> active, >15 -> dedicated.
int engagement_class(long minutes);

struct HourBucket {
  long day_index;
  int hour;
  long minutes;  // floor((last - first) within the hour), 0 for single events
};

// Time-on-task per (day, hour) bucket for one student's events. Buckets are
// computed independently, so sessions spanning an hour boundary under-count.
std::vector<HourBucket> time_on_task(std::vector<RawLogEvent> events);

struct SeriesBuildResult {
  EngagementSeries series;
  int dropped_events = 0;  // events outside the 17-week window
};

// Weeks are half-open [start+7d*(w-1), start+7d*w) from the semester start
// date; per (week, frame) the hour-bucket minutes are summed then classified.
SeriesBuildResult build_series(const std::vector<RawLogEvent>& events,
                               const CivilDateTime& semester_start);

// Tercile labels from exam scores: linear-interpolation quantiles at 1/3 and
// 2/3, strict comparisons, then any tie group straddling a boundary is moved
// wholly to its majority side (ties break to the lower class). Needs >= 3
// scores.
std::vector<int> bin_scores(const std::vector<double>& scores);

// ---- simulators ------------------------------------------------------------

// Deterministic behavioural archetypes replacing the LLM-generated surrogate
// scripts; each produces valid 4x17 grids with a distinct engagement pattern.
enum class Archetype : int {
  kConsistentEvener = 0,
  kWeekendCrammer = 1,
  kPreTestSpiker = 2,
  kDecliner = 3,
  kRandomDabbler = 4,
};
inline constexpr int kArchetypes = 5;

EngagementSeries simulate_series(Archetype a, double intensity, Rng& rng);

struct PoolSpec {
  int simulators = 20;      // archetypes x jitter variants
  int per_simulator = 10000;
  int sample_size = 100000;
  // intensity jitter grid across the variants of one archetype
  double intensity_base = 0.6;
  double intensity_step = 0.35;
};

struct PoolResult {
  size_t pool_size = 0;
  std::vector<EngagementSeries> sample;
};

// Runs every simulator configuration, pools the output and draws a uniform
// subsample without replacement.
PoolResult simulate_public(const PoolSpec& spec, Rng& rng);

struct CohortSpec {
  std::string tag;
  int n = 110;
  std::array<double, kArchetypes> mixture{0.2, 0.2, 0.2, 0.2, 0.2};
  double score_noise = 6.0;
  // per-student intensity ~ U[base, base + spread]
  double intensity_base = 0.7;
  double intensity_spread = 0.6;
};

// Labelled cohort: archetype mixture draws a series per student; the exam
// score is total engagement plus Gaussian noise, binned into terciles.
LabelledDataset simulate_cohort(const CohortSpec& spec, Rng& rng);

// ---- serialization ---------------------------------------------------------

// Dataset CSV: student_id,label,m01..m17,a01..a17,e01..e17,o01..o17 with
// cells valued 0/1/2 and label 0/1/2 (-1 for unlabelled pools).
void save_dataset(const LabelledDataset& ds, const std::string& path);
LabelledDataset load_dataset(const std::string& path);

// Raw log CSV: student_id,timestamp (RFC 3339).
std::vector<RawLogEvent> load_events(const std::string& path);

// Scores CSV: student_id,score.
std::vector<std::pair<std::string, double>> load_scores(
    const std::string& path);

}  // namespace caps::data
