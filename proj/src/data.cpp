// SPDX-License-Identifier: Apache-2.0
#include "caps/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "caps/errors.hpp"
#include "caps/io.hpp"

namespace caps::data {

void EngagementSeries::set(int frame, int week, int cls) {
  if (frame < 0 || frame >= kFrames || week < 0 || week >= kWeeks)
    throw std::invalid_argument("EngagementSeries: cell (" +
                                std::to_string(frame) + "," +
                                std::to_string(week) + ") out of range");
  if (cls < 0 || cls >= kClasses)
    throw std::invalid_argument("EngagementSeries: class " +
                                std::to_string(cls) + " not in {0,1,2}");
  cells[frame * kWeeks + week] = static_cast<uint8_t>(cls);
}

std::array<int, kLabels> LabelledDataset::label_counts() const {
  std::array<int, kLabels> counts{};
  for (const auto& r : records)
    if (r.label >= 0 && r.label < kLabels) counts[r.label]++;
  return counts;
}

// ---- timestamps ------------------------------------------------------------

namespace {
// Howard Hinnant's days-from-civil algorithm.
long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy =
      static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

bool valid_date(int y, int m, int d) {
  if (m < 1 || m > 12 || d < 1) return false;
  static const int dim[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int days = dim[m - 1];
  if (m == 2 && ((y % 4 == 0 && y % 100 != 0) || y % 400 == 0)) days = 29;
  return d <= days;
}
}  // namespace

long CivilDateTime::day_index() const {
  return days_from_civil(year, month, day);
}

CivilDateTime parse_rfc3339(const std::string& s) {
  CivilDateTime t;
  char tzc = 0;
  int oh = 0, om = 0;
  int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c%2d:%2d", &t.year,
                      &t.month, &t.day, &t.hour, &t.minute, &t.second, &tzc,
                      &oh, &om);
  if (n < 7) throw config_error("unparseable timestamp: " + s);
  if (tzc == 'Z' || tzc == 'z') {
    t.utc_offset_minutes = 0;
  } else if ((tzc == '+' || tzc == '-') && n == 9) {
    if (oh > 23 || om > 59)
      throw config_error("unparseable timestamp offset: " + s);
    t.utc_offset_minutes = (oh * 60 + om) * (tzc == '-' ? -1 : 1);
  } else {
    throw config_error("unparseable timestamp: " + s);
  }
  if (!valid_date(t.year, t.month, t.day) || t.hour > 23 || t.hour < 0 ||
      t.minute > 59 || t.minute < 0 || t.second > 60 || t.second < 0)
    throw config_error("timestamp out of range: " + s);
  return t;
}

// ---- preprocessing ---------------------------------------------------------

int frame_of(int hour) {
  if (hour < 0 || hour > 23)
    throw std::invalid_argument("frame_of: hour " + std::to_string(hour));
  if (hour >= 5 && hour <= 11) return kMorning;
  if (hour >= 12 && hour <= 16) return kAfternoon;
  if (hour >= 17) return kEvening;
  return kOvernight;
}

int engagement_class(long minutes) {
  if (minutes < 0)
    throw std::invalid_argument("engagement_class: negative minutes " +
                                std::to_string(minutes));
  if (minutes == 0) return 0;
  if (minutes <= 15) return 1;
  return 2;
}

std::vector<HourBucket> time_on_task(std::vector<RawLogEvent> events) {
  // (day, hour) -> [first, last] second-of-hour
  std::map<std::pair<long, int>, std::pair<int, int>> span;
  for (const auto& e : events) {
    const auto key = std::make_pair(e.ts.day_index(), e.ts.hour);
    const int sec = e.ts.second_of_hour();
    auto it = span.find(key);
    if (it == span.end()) {
      span.emplace(key, std::make_pair(sec, sec));
    } else {
      it->second.first = std::min(it->second.first, sec);
      it->second.second = std::max(it->second.second, sec);
    }
  }
  std::vector<HourBucket> out;
  out.reserve(span.size());
  for (const auto& [key, fl] : span)
    out.push_back({key.first, key.second, (fl.second - fl.first) / 60});
  return out;
}

SeriesBuildResult build_series(const std::vector<RawLogEvent>& events,
                               const CivilDateTime& semester_start) {
  const long start = semester_start.day_index();
  SeriesBuildResult res;
  std::vector<RawLogEvent> in_window;
  for (const auto& e : events) {
    const long diff = e.ts.day_index() - start;
    if (diff >= 0 && diff < 7L * kWeeks)
      in_window.push_back(e);
    else
      res.dropped_events++;
  }
  long minutes[kFrames][kWeeks] = {};
  for (const auto& b : time_on_task(std::move(in_window))) {
    const int week = static_cast<int>((b.day_index - start) / 7);
    minutes[frame_of(b.hour)][week] += b.minutes;
  }
  for (int f = 0; f < kFrames; ++f)
    for (int w = 0; w < kWeeks; ++w)
      res.series.set(f, w, engagement_class(minutes[f][w]));
  return res;
}

namespace {
double quantile_linear(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1) * p;
  const size_t lo = static_cast<size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - lo) * (sorted[lo + 1] - sorted[lo]);
}
}  // namespace

std::vector<int> bin_scores(const std::vector<double>& scores) {
  if (scores.size() < 3)
    throw std::invalid_argument("bin_scores: need at least 3 scores, got " +
                                std::to_string(scores.size()));
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const double q13 = quantile_linear(sorted, 1.0 / 3.0);
  const double q23 = quantile_linear(sorted, 2.0 / 3.0);

  std::vector<int> cls(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < q13)
      cls[i] = 0;
    else if (scores[i] > q23)
      cls[i] = 2;
    else
      cls[i] = 1;
  }

  // Unify any tie group that straddles a boundary to its majority side
  // (lower class on a majority tie), so equal scores always share a class.
  std::map<double, std::array<int, kLabels>> groups;
  for (size_t i = 0; i < scores.size(); ++i) groups[scores[i]][cls[i]]++;
  for (const auto& [value, counts] : groups) {
    int distinct = 0;
    for (int c : counts) distinct += c > 0;
    if (distinct <= 1) continue;
    int best = 0;
    for (int k = 1; k < kLabels; ++k)
      if (counts[k] > counts[best]) best = k;
    for (size_t i = 0; i < scores.size(); ++i)
      if (scores[i] == value) cls[i] = best;
  }
  return cls;
}

// ---- simulators ------------------------------------------------------------

namespace {
long clamp_minutes(double m) {
  return m <= 0 ? 0 : static_cast<long>(std::llround(m));
}
}  // namespace

EngagementSeries simulate_series(Archetype a, double intensity, Rng& rng) {
  EngagementSeries s;
  double minutes[kFrames][kWeeks] = {};
  switch (a) {
    case Archetype::kConsistentEvener: {
      // steady moderate work in the day frames, every week
      const double base[kFrames] = {9, 7, 11, 0.3};
      for (int w = 0; w < kWeeks; ++w)
        for (int f = 0; f < kFrames; ++f)
          minutes[f][w] = intensity * base[f] * (0.7 + 0.6 * rng.uniform());
      break;
    }
    case Archetype::kWeekendCrammer: {
      // long evening bursts every few weeks, little in between
      const int period = 2 + static_cast<int>(rng.uniform_int(2));
      const int phase = static_cast<int>(rng.uniform_int(period));
      for (int w = 0; w < kWeeks; ++w) {
        if (w % period == phase) {
          minutes[kEvening][w] = intensity * (30 + 25 * rng.uniform());
          minutes[kOvernight][w] = intensity * 6 * rng.uniform();
        } else if (rng.uniform() < 0.25) {
          minutes[kEvening][w] = intensity * 4 * rng.uniform();
        }
      }
      break;
    }
    case Archetype::kPreTestSpiker: {
      // effort ramps up towards the end of the semester
      for (int w = 0; w < kWeeks; ++w) {
        const double ramp = std::pow((w + 1.0) / kWeeks, 2.0);
        minutes[kAfternoon][w] = intensity * 25 * ramp * (0.5 + rng.uniform());
        minutes[kEvening][w] = intensity * 30 * ramp * (0.5 + rng.uniform());
      }
      break;
    }
    case Archetype::kDecliner: {
      // strong start fading towards inactivity
      for (int w = 0; w < kWeeks; ++w) {
        const double fade = 1.0 - static_cast<double>(w) / kWeeks;
        minutes[kMorning][w] = intensity * 18 * fade * (0.5 + rng.uniform());
        minutes[kEvening][w] = intensity * 22 * fade * (0.5 + rng.uniform());
      }
      break;
    }
    case Archetype::kRandomDabbler: {
      for (int w = 0; w < kWeeks; ++w)
        for (int f = 0; f < kFrames; ++f)
          if (rng.uniform() < 0.18)
            minutes[f][w] = intensity * 8 * rng.uniform_pos() * 2;
      break;
    }
  }
  for (int f = 0; f < kFrames; ++f)
    for (int w = 0; w < kWeeks; ++w)
      s.set(f, w, engagement_class(clamp_minutes(minutes[f][w])));
  return s;
}

PoolResult simulate_public(const PoolSpec& spec, Rng& rng) {
  if (spec.simulators < 2)
    throw std::invalid_argument("simulate_public: need at least 2 simulators");
  const int variants = (spec.simulators + kArchetypes - 1) / kArchetypes;
  std::vector<EngagementSeries> pool;
  pool.reserve(static_cast<size_t>(spec.simulators) * spec.per_simulator);
  for (int c = 0; c < spec.simulators; ++c) {
    const auto arch = static_cast<Archetype>(c % kArchetypes);
    // parameter jitter across the variants of one archetype
    const double intensity =
        spec.intensity_base + spec.intensity_step * (c / kArchetypes % variants);
    for (int i = 0; i < spec.per_simulator; ++i)
      pool.push_back(simulate_series(arch, intensity, rng));
  }
  PoolResult res;
  res.pool_size = pool.size();
  if (spec.sample_size > static_cast<int>(pool.size()))
    throw std::invalid_argument("simulate_public: sample larger than pool");
  // partial Fisher-Yates for a uniform subsample without replacement
  for (int i = 0; i < spec.sample_size; ++i) {
    const auto j =
        i + rng.uniform_int(static_cast<int64_t>(pool.size()) - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  res.sample.assign(pool.begin(), pool.begin() + spec.sample_size);
  return res;
}

LabelledDataset simulate_cohort(const CohortSpec& spec, Rng& rng) {
  if (spec.n < 3)
    throw std::invalid_argument("simulate_cohort: need at least 3 students");
  double total_weight = 0;
  for (double w : spec.mixture) total_weight += w;
  if (!(total_weight > 0))
    throw std::invalid_argument("simulate_cohort: empty mixture");

  LabelledDataset ds;
  ds.cycle_tag = spec.tag;
  std::vector<double> scores;
  for (int i = 0; i < spec.n; ++i) {
    double u = rng.uniform() * total_weight;
    int arch = 0;
    for (; arch < kArchetypes - 1; ++arch) {
      u -= spec.mixture[arch];
      if (u < 0) break;
    }
    const double intensity =
        spec.intensity_base + spec.intensity_spread * rng.uniform();
    LabelledRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%04d", spec.tag.c_str(), i);
    rec.student_id = buf;
    rec.x = simulate_series(static_cast<Archetype>(arch), intensity, rng);
    long engagement = 0;
    for (uint8_t c : rec.x.cells) engagement += c;
    scores.push_back(static_cast<double>(engagement) +
                     spec.score_noise * rng.gauss());
    ds.records.push_back(std::move(rec));
  }
  const std::vector<int> labels = bin_scores(scores);
  for (int i = 0; i < spec.n; ++i) ds.records[i].label = labels[i];
  return ds;
}

// ---- serialization ---------------------------------------------------------

namespace {
const char* kFramePrefix = "maeo";  // morning, afternoon, evening, overnight

std::string dataset_header() {
  std::string h = "student_id,label";
  for (int f = 0; f < kFrames; ++f)
    for (int w = 0; w < kWeeks; ++w) {
      char col[8];
      std::snprintf(col, sizeof col, ",%c%02d", kFramePrefix[f], w + 1);
      h += col;
    }
  return h;
}
}  // namespace

void save_dataset(const LabelledDataset& ds, const std::string& path) {
  std::string out = dataset_header();
  out += "\n";
  for (const auto& r : ds.records) {
    out += r.student_id;
    out += ",";
    out += std::to_string(r.label);
    for (int f = 0; f < kFrames; ++f)
      for (int w = 0; w < kWeeks; ++w) {
        out += ",";
        out += static_cast<char>('0' + r.x.get(f, w));
      }
    out += "\n";
  }
  io::write_text_file(path, out);
}

LabelledDataset load_dataset(const std::string& path) {
  const auto rows = io::parse_csv(io::read_text_file(path));
  if (rows.empty()) throw config_error(path + ": empty dataset file");
  if (rows[0] != io::parse_csv(dataset_header())[0])
    throw config_error(path + ": unexpected header (want '" +
                       dataset_header() + "')");
  if (rows.size() < 2) throw config_error(path + ": dataset has no records");

  LabelledDataset ds;
  std::set<std::string> seen;
  for (size_t ri = 1; ri < rows.size(); ++ri) {
    const auto& row = rows[ri];
    if (row.size() != 2 + kCells)
      throw config_error(path + ": row " + std::to_string(ri + 1) + " has " +
                         std::to_string(row.size()) + " columns, want " +
                         std::to_string(2 + kCells));
    LabelledRecord rec;
    rec.student_id = row[0];
    if (!seen.insert(rec.student_id).second)
      throw config_error(path + ": duplicate student_id '" + rec.student_id +
                         "' at row " + std::to_string(ri + 1));
    try {
      rec.label = std::stoi(row[1]);
    } catch (const std::exception&) {
      throw config_error(path + ": row " + std::to_string(ri + 1) +
                         ": bad label '" + row[1] + "'");
    }
    if (rec.label != kUnlabelled && (rec.label < 0 || rec.label >= kLabels))
      throw config_error(path + ": row " + std::to_string(ri + 1) +
                         ": label " + row[1] + " not in {-1,0,1,2}");
    for (int c = 0; c < kCells; ++c) {
      const std::string& cell = row[2 + static_cast<size_t>(c)];
      if (cell.size() != 1 || cell[0] < '0' || cell[0] > '2')
        throw config_error(path + ": row " + std::to_string(ri + 1) +
                           ", column " + rows[0][2 + static_cast<size_t>(c)] +
                           ": cell value '" + cell + "' not in {0,1,2}");
      rec.x.cells[c] = static_cast<uint8_t>(cell[0] - '0');
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::vector<RawLogEvent> load_events(const std::string& path) {
  const auto rows = io::parse_csv(io::read_text_file(path));
  if (rows.empty() || rows[0] != std::vector<std::string>{"student_id", "timestamp"})
    throw config_error(path + ": expected header 'student_id,timestamp'");
  std::vector<RawLogEvent> events;
  for (size_t ri = 1; ri < rows.size(); ++ri) {
    if (rows[ri].size() != 2)
      throw config_error(path + ": row " + std::to_string(ri + 1) +
                         " has wrong column count");
    try {
      events.push_back({rows[ri][0], parse_rfc3339(rows[ri][1])});
    } catch (const config_error& e) {
      throw config_error(path + ": row " + std::to_string(ri + 1) + ": " +
                         e.what());
    }
  }
  return events;
}

std::vector<std::pair<std::string, double>> load_scores(
    const std::string& path) {
  const auto rows = io::parse_csv(io::read_text_file(path));
  if (rows.empty() || rows[0] != std::vector<std::string>{"student_id", "score"})
    throw config_error(path + ": expected header 'student_id,score'");
  std::vector<std::pair<std::string, double>> out;
  for (size_t ri = 1; ri < rows.size(); ++ri) {
    if (rows[ri].size() != 2)
      throw config_error(path + ": row " + std::to_string(ri + 1) +
                         " has wrong column count");
    try {
      out.emplace_back(rows[ri][0], std::stod(rows[ri][1]));
    } catch (const std::exception&) {
      throw config_error(path + ": row " + std::to_string(ri + 1) +
                         ": bad score '" + rows[ri][1] + "'");
    }
  }
  return out;
}

}  // namespace caps::data
