// Beatmap ingest: parse, validate, and time-resolve rhythm-game charts.
//
// Wire format is a single JSON object:
//   { "bpm": number, "songLength": number (optional),
//     "notes":     [{"beat","column","row","color":0|1,"cutDirection":0..8}...],
//     "bombs":     [{"beat","column","row"}...],
//     "obstacles": [{"beat","duration","column","width","kind":0|1}...] }
// Grid is fixed at 4 columns x 3 rows. Parsing enforces per-field ranges;
// joint rules (lane span, events past song end) are reported by
// validate_beatmap as data rather than thrown.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "beatpose/common.hpp"

namespace beatpose {

inline constexpr int kGridColumns = 4;
inline constexpr int kGridRows = 3;

enum class NoteColor { Left = 0, Right = 1 };

enum class CutDirection {
  Up = 0,
  Down = 1,
  Left = 2,
  Right = 3,
  UpLeft = 4,
  UpRight = 5,
  DownLeft = 6,
  DownRight = 7,
  Any = 8,
};

enum class ObstacleKind { FullHeight = 0, Crouch = 1 };

struct NoteEvent {
  double beat = 0.0;
  int column = 0;
  int row = 0;
  NoteColor color = NoteColor::Left;
  CutDirection cut_direction = CutDirection::Any;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct BombEvent {
  double beat = 0.0;
  int column = 0;
  int row = 0;

  friend bool operator==(const BombEvent&, const BombEvent&) = default;
};

struct ObstacleEvent {
  double beat = 0.0;
  double duration = 1.0;  // beats
  int column = 0;         // leftmost occupied lane
  int width = 1;          // lanes
  ObstacleKind kind = ObstacleKind::FullHeight;

  friend bool operator==(const ObstacleEvent&, const ObstacleEvent&) = default;
};

struct Beatmap {
  double bpm = 120.0;
  double song_length = 0.0;  // seconds
  std::vector<NoteEvent> notes;
  std::vector<BombEvent> bombs;
  std::vector<ObstacleEvent> obstacles;

  friend bool operator==(const Beatmap&, const Beatmap&) = default;
};

// One invariant violation found by validate_beatmap. `event_index` is -1 for
// map-level rules.
struct Violation {
  std::string category;  // "map", "notes", "bombs", "obstacles"
  int event_index = -1;
  std::string field;
  std::string rule;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

// beat * 60 / bpm, exact in double precision.
inline double beats_to_seconds(double beat, double bpm) {
  if (!(bpm > 0.0))
    throw Error(ErrorKind::Domain, "bpm must be positive",
                {{"bpm", std::to_string(bpm)}});
  return beat * 60.0 / bpm;
}

// Ascending by beat; ties broken by (column, row, declaration order).
inline void sort_events(Beatmap& map) {
  std::stable_sort(map.notes.begin(), map.notes.end(),
                   [](const NoteEvent& a, const NoteEvent& b) {
                     if (a.beat != b.beat) return a.beat < b.beat;
                     if (a.column != b.column) return a.column < b.column;
                     return a.row < b.row;
                   });
  std::stable_sort(map.bombs.begin(), map.bombs.end(),
                   [](const BombEvent& a, const BombEvent& b) {
                     if (a.beat != b.beat) return a.beat < b.beat;
                     if (a.column != b.column) return a.column < b.column;
                     return a.row < b.row;
                   });
  std::stable_sort(map.obstacles.begin(), map.obstacles.end(),
                   [](const ObstacleEvent& a, const ObstacleEvent& b) {
                     if (a.beat != b.beat) return a.beat < b.beat;
                     return a.column < b.column;
                   });
}

inline Beatmap sorted_events(Beatmap map) {
  sort_events(map);
  return map;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& obj,
                                           const char* field,
                                           const std::string& where) {
  auto it = obj.find(field);
  if (it == obj.end())
    throw Error(ErrorKind::Schema, "missing required field '" + std::string(field) +
                                       "' in " + where,
                {{"field", field}, {"where", where}});
  return *it;
}

inline double number_field(const nlohmann::json& obj, const char* field,
                           const std::string& where) {
  const nlohmann::json& v = require_field(obj, field, where);
  if (!v.is_number())
    throw Error(ErrorKind::Schema, "field '" + std::string(field) + "' in " +
                                       where + " must be a number",
                {{"field", field}, {"where", where}});
  return v.get<double>();
}

inline int int_field(const nlohmann::json& obj, const char* field,
                     const std::string& where) {
  const nlohmann::json& v = require_field(obj, field, where);
  if (!v.is_number_integer())
    throw Error(ErrorKind::Schema, "field '" + std::string(field) + "' in " +
                                       where + " must be an integer",
                {{"field", field}, {"where", where}});
  return v.get<int>();
}

[[noreturn]] inline void range_error(const std::string& category, int index,
                                     const char* field,
                                     const std::string& got) {
  throw Error(ErrorKind::Validation,
              category + " event " + std::to_string(index) + ": field '" +
                  field + "' out of range (got " + got + ")",
              {{"category", category},
               {"event_index", std::to_string(index)},
               {"field", field}});
}

inline void check_range_int(const std::string& category, int index,
                            const char* field, int value, int lo, int hi) {
  if (value < lo || value > hi)
    range_error(category, index, field, std::to_string(value));
}

}  // namespace detail

// Resolved end time of the last event, in seconds (0 for an empty map).
inline double last_event_end_seconds(const Beatmap& map) {
  double last = 0.0;
  for (const NoteEvent& e : map.notes)
    last = std::max(last, beats_to_seconds(e.beat, map.bpm));
  for (const BombEvent& e : map.bombs)
    last = std::max(last, beats_to_seconds(e.beat, map.bpm));
  for (const ObstacleEvent& e : map.obstacles)
    last = std::max(last, beats_to_seconds(e.beat + e.duration, map.bpm));
  return last;
}

// Parses the JSON wire format. Events come back sorted. Throws:
//   Parse      malformed JSON (detail carries the byte offset)
//   Schema     missing or mistyped field
//   Validation per-field value out of range
inline Beatmap parse_beatmap(const std::string& raw) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Parse, std::string("malformed JSON: ") + e.what(),
                {{"byte_offset", std::to_string(e.byte)}});
  }
  if (!doc.is_object())
    throw Error(ErrorKind::Schema, "top-level JSON value must be an object");

  Beatmap map;
  map.bpm = detail::number_field(doc, "bpm", "top-level");
  if (!(map.bpm > 0.0))
    throw Error(ErrorKind::Validation,
                "field 'bpm' out of range (must be > 0, got " +
                    std::to_string(map.bpm) + ")",
                {{"field", "bpm"}});

  auto array_field = [&doc](const char* field) -> const nlohmann::json& {
    const nlohmann::json& v = detail::require_field(doc, field, "top-level");
    if (!v.is_array())
      throw Error(ErrorKind::Schema,
                  "field '" + std::string(field) + "' must be an array",
                  {{"field", field}});
    return v;
  };

  int index = 0;
  for (const nlohmann::json& item : array_field("notes")) {
    const std::string where = "notes[" + std::to_string(index) + "]";
    NoteEvent e;
    e.beat = detail::number_field(item, "beat", where);
    e.column = detail::int_field(item, "column", where);
    e.row = detail::int_field(item, "row", where);
    int color = detail::int_field(item, "color", where);
    int cut = detail::int_field(item, "cutDirection", where);
    if (e.beat < 0.0)
      detail::range_error("notes", index, "beat", std::to_string(e.beat));
    detail::check_range_int("notes", index, "column", e.column, 0, kGridColumns - 1);
    detail::check_range_int("notes", index, "row", e.row, 0, kGridRows - 1);
    detail::check_range_int("notes", index, "color", color, 0, 1);
    detail::check_range_int("notes", index, "cutDirection", cut, 0, 8);
    e.color = static_cast<NoteColor>(color);
    e.cut_direction = static_cast<CutDirection>(cut);
    map.notes.push_back(e);
    ++index;
  }

  index = 0;
  for (const nlohmann::json& item : array_field("bombs")) {
    const std::string where = "bombs[" + std::to_string(index) + "]";
    BombEvent e;
    e.beat = detail::number_field(item, "beat", where);
    e.column = detail::int_field(item, "column", where);
    e.row = detail::int_field(item, "row", where);
    if (e.beat < 0.0)
      detail::range_error("bombs", index, "beat", std::to_string(e.beat));
    detail::check_range_int("bombs", index, "column", e.column, 0, kGridColumns - 1);
    detail::check_range_int("bombs", index, "row", e.row, 0, kGridRows - 1);
    map.bombs.push_back(e);
    ++index;
  }

  index = 0;
  for (const nlohmann::json& item : array_field("obstacles")) {
    const std::string where = "obstacles[" + std::to_string(index) + "]";
    ObstacleEvent e;
    e.beat = detail::number_field(item, "beat", where);
    e.duration = detail::number_field(item, "duration", where);
    e.column = detail::int_field(item, "column", where);
    e.width = detail::int_field(item, "width", where);
    int kind = detail::int_field(item, "kind", where);
    if (e.beat < 0.0)
      detail::range_error("obstacles", index, "beat", std::to_string(e.beat));
    if (!(e.duration > 0.0))
      detail::range_error("obstacles", index, "duration", std::to_string(e.duration));
    detail::check_range_int("obstacles", index, "column", e.column, 0, kGridColumns - 1);
    if (e.width < 1)
      detail::range_error("obstacles", index, "width", std::to_string(e.width));
    detail::check_range_int("obstacles", index, "kind", kind, 0, 1);
    e.kind = static_cast<ObstacleKind>(kind);
    map.obstacles.push_back(e);
    ++index;
  }

  if (auto it = doc.find("songLength"); it != doc.end()) {
    if (!it->is_number())
      throw Error(ErrorKind::Schema, "field 'songLength' must be a number",
                  {{"field", "songLength"}});
    map.song_length = it->get<double>();
    if (!(map.song_length > 0.0))
      throw Error(ErrorKind::Validation,
                  "field 'songLength' out of range (must be > 0)",
                  {{"field", "songLength"}});
  } else {
    // Derived horizon: last resolved event end plus a 2 s tail.
    map.song_length = last_event_end_seconds(map) + 2.0;
  }

  sort_events(map);
  return map;
}

// Every invariant violation as data; empty iff the map is fully valid.
inline std::vector<Violation> validate_beatmap(const Beatmap& map) {
  std::vector<Violation> out;
  auto add = [&out](std::string category, int index, std::string field,
                    std::string rule, std::string message) {
    out.push_back({std::move(category), index, std::move(field),
                   std::move(rule), std::move(message)});
  };

  if (!(map.bpm > 0.0))
    add("map", -1, "bpm", "bpm_positive", "bpm must be > 0");
  if (!(map.song_length > 0.0))
    add("map", -1, "song_length", "song_length_positive",
        "song_length must be > 0");
  const bool timing_ok = map.bpm > 0.0;

  auto check_order = [&add](const char* category, const auto& events) {
    for (std::size_t i = 1; i < events.size(); ++i)
      if (events[i].beat < events[i - 1].beat) {
        add(category, static_cast<int>(i), "beat", "event_order",
            "events must be sorted ascending by beat");
        break;
      }
  };
  check_order("notes", map.notes);
  check_order("bombs", map.bombs);
  check_order("obstacles", map.obstacles);

  for (std::size_t i = 0; i < map.notes.size(); ++i) {
    const NoteEvent& e = map.notes[i];
    const int idx = static_cast<int>(i);
    if (e.beat < 0.0)
      add("notes", idx, "beat", "beat_nonnegative", "beat must be >= 0");
    if (e.column < 0 || e.column >= kGridColumns)
      add("notes", idx, "column", "column_range", "column must be in [0,3]");
    if (e.row < 0 || e.row >= kGridRows)
      add("notes", idx, "row", "row_range", "row must be in [0,2]");
    if (timing_ok && beats_to_seconds(e.beat, map.bpm) > map.song_length)
      add("notes", idx, "beat", "past_song_length",
          "event resolves past song_length");
  }

  for (std::size_t i = 0; i < map.bombs.size(); ++i) {
    const BombEvent& e = map.bombs[i];
    const int idx = static_cast<int>(i);
    if (e.beat < 0.0)
      add("bombs", idx, "beat", "beat_nonnegative", "beat must be >= 0");
    if (e.column < 0 || e.column >= kGridColumns)
      add("bombs", idx, "column", "column_range", "column must be in [0,3]");
    if (e.row < 0 || e.row >= kGridRows)
      add("bombs", idx, "row", "row_range", "row must be in [0,2]");
    if (timing_ok && beats_to_seconds(e.beat, map.bpm) > map.song_length)
      add("bombs", idx, "beat", "past_song_length",
          "event resolves past song_length");
  }

  for (std::size_t i = 0; i < map.obstacles.size(); ++i) {
    const ObstacleEvent& e = map.obstacles[i];
    const int idx = static_cast<int>(i);
    if (e.beat < 0.0)
      add("obstacles", idx, "beat", "beat_nonnegative", "beat must be >= 0");
    if (!(e.duration > 0.0))
      add("obstacles", idx, "duration", "duration_positive",
          "duration must be > 0");
    if (e.column < 0 || e.column >= kGridColumns)
      add("obstacles", idx, "column", "column_range", "column must be in [0,3]");
    if (e.width < 1)
      add("obstacles", idx, "width", "width_min", "width must be >= 1");
    else if (e.column >= 0 && e.column + e.width > kGridColumns)
      add("obstacles", idx, "column", "lane_span",
          "column + width must be <= 4");
    if (timing_ok && e.duration > 0.0 &&
        beats_to_seconds(e.beat + e.duration, map.bpm) > map.song_length)
      add("obstacles", idx, "beat", "past_song_length",
          "event resolves past song_length");
  }

  return out;
}

// Canonical serialization back to the wire format. songLength is always
// written so derived values survive a round trip.
inline std::string serialize_beatmap(const Beatmap& map) {
  nlohmann::json doc;
  doc["bpm"] = map.bpm;
  doc["songLength"] = map.song_length;
  doc["notes"] = nlohmann::json::array();
  for (const NoteEvent& e : map.notes)
    doc["notes"].push_back({{"beat", e.beat},
                            {"column", e.column},
                            {"row", e.row},
                            {"color", static_cast<int>(e.color)},
                            {"cutDirection", static_cast<int>(e.cut_direction)}});
  doc["bombs"] = nlohmann::json::array();
  for (const BombEvent& e : map.bombs)
    doc["bombs"].push_back(
        {{"beat", e.beat}, {"column", e.column}, {"row", e.row}});
  doc["obstacles"] = nlohmann::json::array();
  for (const ObstacleEvent& e : map.obstacles)
    doc["obstacles"].push_back({{"beat", e.beat},
                                {"duration", e.duration},
                                {"column", e.column},
                                {"width", e.width},
                                {"kind", static_cast<int>(e.kind)}});
  return doc.dump(2) + "\n";
}

}  // namespace beatpose
