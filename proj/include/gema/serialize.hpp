#pragma once

#include "gema/proman_vae.hpp"

#include <string>
#include <vector>

#include <json.hpp>

namespace gema {

/// Binary model files start with this tag followed by a little-endian u32 version.
inline constexpr char kModelMagic[8] = {'G', 'E', 'M', 'A', 'M', 'D', 'L', '\0'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

nlohmann::json model_to_json(const ProManModel& model);
ProManModel model_from_json(const nlohmann::json& j);

std::vector<char> model_to_bytes(const ProManModel& model);
ProManModel model_from_bytes(const std::vector<char>& bytes);

/// `.json` paths get the JSON form, anything else the binary form.
void save_model(const ProManModel& model, const std::string& path);
/// Detects the format from the leading bytes.
ProManModel load_model(const std::string& path);

}  // namespace gema
