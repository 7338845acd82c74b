#pragma once

#include <filesystem>

#include <json.hpp>

#include "palette_field/field.hpp"

namespace palette_field {

// `extra` travels in the trailing JSON blob next to the palette (density_scale is
// always written there too).
struct Checkpoint {
  FieldParams params;
  nlohmann::json extra = nlohmann::json::object();
};

std::vector<uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Throws kIo when the file cannot be read and kCheckpoint when it is malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace palette_field
