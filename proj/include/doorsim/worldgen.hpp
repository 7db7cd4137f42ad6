#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace doorsim {

enum class KnobType { Pull, Lever, Round };
enum class OpenDirection { Push, Pull };
enum class HingeSide { Left, Right };

std::string_view to_string(KnobType k);
std::string_view to_string(OpenDirection d);
std::string_view to_string(HingeSide h);
KnobType parse_knob_type(std::string_view s);
OpenDirection parse_open_direction(std::string_view s);
HingeSide parse_hinge_side(std::string_view s);

inline constexpr std::string_view kWorldSchemaVersion = "doorgym_world_v1";
inline constexpr std::string_view kWorldSetSchemaVersion = "doorgym_worldset_v1";

/// One fully sampled door world. Lengths in meters, masses in kilograms,
/// joint coefficients as dimensionless scaling factors (converted to SI by
/// the dynamics module).
struct WorldSpec {
  std::string world_id;
  std::string schema_version{kWorldSchemaVersion};
  KnobType knob_type = KnobType::Pull;
  OpenDirection open_direction = OpenDirection::Pull;
  HingeSide hinge_side = HingeSide::Left;
  double door_height_m = 2.0;
  double door_width_m = 1.0;
  double door_thickness_m = 0.025;
  double door_mass_kg = 40.0;
  double knob_mass_kg = 0.5;
  /// Raw draw from the table's knob-mass row, read as hectograms.
  double knob_mass_hg = 5.0;
  double knob_height_m = 1.0;
  /// Knob center sits (1 - ratio) * width from the hinge axis.
  double knob_edge_ratio = 0.15;
  double wall_offset_y_m = 0.0;
  double frame_damper = 0.15;
  double frame_spring = 0.15;
  double frame_frictionloss = 0.5;
  double knob_damper = 0.15;
  double knob_spring = 0.125;
  double knob_frictionloss = 0.5;
  double knob_rot_range_rad = 1.35;
  double knob_surface_friction = 0.75;
  double robot_joint_damping = 0.2;
  std::uint64_t rng_seed = 0;

  bool operator==(const WorldSpec&) const = default;
};

/// Sampling interval of one continuous WorldSpec field.
struct FieldRange {
  std::string_view name;
  double lo;
  double hi;
  double WorldSpec::*member;
};

/// Every continuous field, in the order the sampler draws them.
std::span<const FieldRange> world_field_ranges();

/// Pure function of its arguments. The per-world stream is seeded with
/// derive_seed(master_seed, index); hinge side is drawn first, then every
/// field of world_field_ranges() in order.
WorldSpec sample_world(std::uint64_t master_seed, std::uint64_t index, KnobType knob,
                       OpenDirection direction);

/// Throws SchemaError naming the first out-of-range field.
void validate_world(const WorldSpec& w);

std::string world_to_json(const WorldSpec& w);
WorldSpec world_from_json(std::string_view text);
void write_world(const WorldSpec& w, const std::filesystem::path& path);
WorldSpec read_world(const std::filesystem::path& path);

struct WorldSet {
  std::filesystem::path manifest_path;
  std::uint64_t master_seed = 0;
  std::vector<std::string> files;  // relative to the manifest directory
  std::vector<WorldSpec> worlds;
};

std::vector<WorldSpec> sample_world_set(std::uint64_t master_seed, std::size_t n, KnobType knob,
                                        OpenDirection direction);

/// Writes n world files plus manifest.json into out_dir.
WorldSet generate_world_set(std::uint64_t master_seed, std::size_t n, KnobType knob,
                            OpenDirection direction, const std::filesystem::path& out_dir);

/// Accepts either a manifest path or the directory holding manifest.json.
WorldSet load_world_set(const std::filesystem::path& path);

}  // namespace doorsim
