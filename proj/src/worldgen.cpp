#include "doorsim/worldgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"

#include "doorsim/errors.hpp"
#include "doorsim/io.hpp"
#include "doorsim/rng.hpp"

namespace doorsim {

using nlohmann::json;

std::string_view to_string(KnobType k) {
  switch (k) {
    case KnobType::Pull: return "pull";
    case KnobType::Lever: return "lever";
    case KnobType::Round: return "round";
  }
  return "?";
}

std::string_view to_string(OpenDirection d) { return d == OpenDirection::Push ? "push" : "pull"; }
std::string_view to_string(HingeSide h) { return h == HingeSide::Left ? "left" : "right"; }

KnobType parse_knob_type(std::string_view s) {
  if (s == "pull") return KnobType::Pull;
  if (s == "lever") return KnobType::Lever;
  if (s == "round") return KnobType::Round;
  throw SchemaError("knob_type", "unknown value '" + std::string(s) + "'");
}

OpenDirection parse_open_direction(std::string_view s) {
  if (s == "push") return OpenDirection::Push;
  if (s == "pull") return OpenDirection::Pull;
  throw SchemaError("open_direction", "unknown value '" + std::string(s) + "'");
}

HingeSide parse_hinge_side(std::string_view s) {
  if (s == "left") return HingeSide::Left;
  if (s == "right") return HingeSide::Right;
  throw SchemaError("hinge_side", "unknown value '" + std::string(s) + "'");
}

namespace {

constexpr double deg(double d) { return d * std::numbers::pi / 180.0; }

// Physical and robot rows of the door-world randomization table. Lengths are
// converted from millimeters; knob mass is drawn in hectograms and converted
// separately.
constexpr std::array<FieldRange, 19> kRanges{{
    {"door_height_m", 2.0, 2.5, &WorldSpec::door_height_m},
    {"door_width_m", 0.8, 1.2, &WorldSpec::door_width_m},
    {"door_thickness_m", 0.02, 0.03, &WorldSpec::door_thickness_m},
    {"door_mass_kg", 22.4, 76.5, &WorldSpec::door_mass_kg},
    {"knob_mass_hg", 4.0, 7.0, &WorldSpec::knob_mass_hg},
    {"knob_height_m", 0.95, 1.05, &WorldSpec::knob_height_m},
    {"knob_edge_ratio", 0.10, 0.20, &WorldSpec::knob_edge_ratio},
    {"wall_offset_y_m", -0.2, 0.2, &WorldSpec::wall_offset_y_m},
    {"frame_damper", 0.1, 0.2, &WorldSpec::frame_damper},
    {"frame_spring", 0.1, 0.2, &WorldSpec::frame_spring},
    {"frame_frictionloss", 0.0, 1.0, &WorldSpec::frame_frictionloss},
    {"knob_damper", 0.1, 0.2, &WorldSpec::knob_damper},
    {"knob_spring", 0.1, 0.15, &WorldSpec::knob_spring},
    {"knob_frictionloss", 0.0, 1.0, &WorldSpec::knob_frictionloss},
    {"knob_rot_range_rad", deg(75.0), deg(80.0), &WorldSpec::knob_rot_range_rad},
    {"knob_surface_friction", 0.5, 1.0, &WorldSpec::knob_surface_friction},
    {"robot_joint_damping", 0.1, 0.3, &WorldSpec::robot_joint_damping},
    // Derived, validated but not drawn.
    {"knob_mass_kg", 0.4, 0.7, &WorldSpec::knob_mass_kg},
    {"", 0.0, 0.0, nullptr},
}};

constexpr std::size_t kDrawnFields = 17;
constexpr std::size_t kValidatedFields = 18;

std::string world_id_for(std::uint64_t seed, std::uint64_t index, KnobType knob,
                         OpenDirection dir) {
  std::ostringstream ss;
  ss << "s" << seed << "-i" << index << "-" << to_string(knob) << "-" << to_string(dir);
  return ss.str();
}

template <typename T>
T require(const json& j, std::string_view key) {
  const auto it = j.find(std::string(key));
  if (it == j.end()) throw SchemaError(std::string(key), "missing");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw SchemaError(std::string(key), "wrong type");
  }
}

double require_number(const json& j, std::string_view key) {
  const auto it = j.find(std::string(key));
  if (it == j.end()) throw SchemaError(std::string(key), "missing");
  if (!it->is_number()) throw SchemaError(std::string(key), "expected a number");
  return it->get<double>();
}

}  // namespace

std::span<const FieldRange> world_field_ranges() {
  return std::span<const FieldRange>(kRanges.data(), kValidatedFields);
}

WorldSpec sample_world(std::uint64_t master_seed, std::uint64_t index, KnobType knob,
                       OpenDirection direction) {
  WorldSpec w;
  w.rng_seed = derive_seed(master_seed, index);
  w.world_id = world_id_for(master_seed, index, knob, direction);
  w.knob_type = knob;
  w.open_direction = direction;
  Rng rng(w.rng_seed);
  w.hinge_side = rng.coin() ? HingeSide::Right : HingeSide::Left;
  for (std::size_t i = 0; i < kDrawnFields; ++i) {
    const auto& r = kRanges[i];
    w.*r.member = std::clamp(rng.uniform(r.lo, r.hi), r.lo, r.hi);
  }
  w.knob_mass_kg = w.knob_mass_hg / 10.0;
  return w;
}

void validate_world(const WorldSpec& w) {
  if (w.world_id.empty()) throw SchemaError("world_id", "empty");
  for (const auto& r : world_field_ranges()) {
    const double v = w.*r.member;
    if (!std::isfinite(v) || v < r.lo || v > r.hi) {
      throw SchemaError(std::string(r.name), "value " + format_double(v) + " out of range [" +
                                                 format_double(r.lo) + ", " +
                                                 format_double(r.hi) + "]");
    }
  }
}

std::string world_to_json(const WorldSpec& w) {
  std::ostringstream ss;
  auto str = [&](std::string_view key, std::string_view v, bool last = false) {
    ss << "  " << json(std::string(key)).dump() << ": " << json(std::string(v)).dump()
       << (last ? "\n" : ",\n");
  };
  auto num = [&](std::string_view key, double v) {
    ss << "  \"" << key << "\": " << format_double(v) << ",\n";
  };
  ss << "{\n";
  str("schema_version", w.schema_version);
  str("world_id", w.world_id);
  str("knob_type", to_string(w.knob_type));
  str("open_direction", to_string(w.open_direction));
  str("hinge_side", to_string(w.hinge_side));
  num("door_height_m", w.door_height_m);
  num("door_width_m", w.door_width_m);
  num("door_thickness_m", w.door_thickness_m);
  num("door_mass_kg", w.door_mass_kg);
  num("knob_mass_kg", w.knob_mass_kg);
  num("knob_mass_hg", w.knob_mass_hg);
  num("knob_height_m", w.knob_height_m);
  num("knob_edge_ratio", w.knob_edge_ratio);
  num("wall_offset_y_m", w.wall_offset_y_m);
  num("frame_damper", w.frame_damper);
  num("frame_spring", w.frame_spring);
  num("frame_frictionloss", w.frame_frictionloss);
  num("knob_damper", w.knob_damper);
  num("knob_spring", w.knob_spring);
  num("knob_frictionloss", w.knob_frictionloss);
  num("knob_rot_range_rad", w.knob_rot_range_rad);
  num("knob_surface_friction", w.knob_surface_friction);
  num("robot_joint_damping", w.robot_joint_damping);
  ss << "  \"rng_seed\": " << w.rng_seed << "\n}\n";
  return ss.str();
}

WorldSpec world_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("<document>", e.what());
  }
  if (!j.is_object()) throw SchemaError("<document>", "expected an object");
  const auto version = require<std::string>(j, "schema_version");
  if (version != kWorldSchemaVersion) {
    throw VersionError("world schema version '" + version + "' is not '" +
                       std::string(kWorldSchemaVersion) + "'");
  }
  WorldSpec w;
  w.schema_version = version;
  w.world_id = require<std::string>(j, "world_id");
  w.knob_type = parse_knob_type(require<std::string>(j, "knob_type"));
  w.open_direction = parse_open_direction(require<std::string>(j, "open_direction"));
  w.hinge_side = parse_hinge_side(require<std::string>(j, "hinge_side"));
  for (const auto& r : world_field_ranges()) w.*r.member = require_number(j, r.name);
  const auto seed = j.find("rng_seed");
  if (seed == j.end()) throw SchemaError("rng_seed", "missing");
  if (!seed->is_number_unsigned()) throw SchemaError("rng_seed", "expected an unsigned integer");
  w.rng_seed = seed->get<std::uint64_t>();
  validate_world(w);
  return w;
}

void write_world(const WorldSpec& w, const std::filesystem::path& path) {
  write_text_file(path, world_to_json(w));
}

WorldSpec read_world(const std::filesystem::path& path) {
  return world_from_json(read_text_file(path));
}

std::vector<WorldSpec> sample_world_set(std::uint64_t master_seed, std::size_t n, KnobType knob,
                                        OpenDirection direction) {
  std::vector<WorldSpec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_world(master_seed, i, knob, direction));
  return out;
}

WorldSet generate_world_set(std::uint64_t master_seed, std::size_t n, KnobType knob,
                            OpenDirection direction, const std::filesystem::path& out_dir) {
  if (n < 1) throw ContractViolation("generate_world_set: n must be at least 1");
  WorldSet set;
  set.master_seed = master_seed;
  set.manifest_path = out_dir / "manifest.json";
  set.worlds = sample_world_set(master_seed, n, knob, direction);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<char, 32> name{};
    std::snprintf(name.data(), name.size(), "world_%04zu.json", i);
    set.files.emplace_back(name.data());
    write_world(set.worlds[i], out_dir / set.files.back());
  }
  json manifest = {
      {"schema_version", std::string(kWorldSetSchemaVersion)},
      {"master_seed", master_seed},
      {"count", n},
      {"files", set.files},
  };
  write_text_file(set.manifest_path, manifest.dump(2) + "\n");
  return set;
}

WorldSet load_world_set(const std::filesystem::path& path) {
  WorldSet set;
  set.manifest_path = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  json j;
  try {
    j = json::parse(read_text_file(set.manifest_path));
  } catch (const json::parse_error& e) {
    throw SchemaError("<manifest>", e.what());
  }
  const auto version = require<std::string>(j, "schema_version");
  if (version != kWorldSetSchemaVersion) {
    throw VersionError("world-set schema version '" + version + "' is not '" +
                       std::string(kWorldSetSchemaVersion) + "'");
  }
  set.master_seed = require<std::uint64_t>(j, "master_seed");
  set.files = require<std::vector<std::string>>(j, "files");
  const auto count = require<std::size_t>(j, "count");
  if (count != set.files.size()) throw SchemaError("count", "does not match files[] length");
  const auto dir = set.manifest_path.parent_path();
  std::set<std::string> ids;
  for (const auto& f : set.files) {
    set.worlds.push_back(read_world(dir / f));
    if (!ids.insert(set.worlds.back().world_id).second) {
      throw SchemaError("world_id", "duplicate '" + set.worlds.back().world_id + "'");
    }
  }
  return set;
}

}  // namespace doorsim
