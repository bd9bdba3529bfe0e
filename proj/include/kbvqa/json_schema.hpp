#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace kbvqa::json_schema {

/// Validates `instance` against a JSON Schema document, returning one
/// message per violation (empty means valid).
///
/// Supported keywords: type, enum, properties, required,
/// additionalProperties (boolean or schema), minProperties, maxProperties,
/// items, minItems, maxItems, minLength, minimum, maximum and local
/// "#/..." $ref pointers. Anything else is ignored, so unsupported
/// constraints never reject a document.
std::vector<std::string> validate(const nlohmann::json& schema, const nlohmann::json& instance);

/// One of the schema files shipped under schemas/, e.g.
/// "embeddings.response.schema.json".
const nlohmann::json& bundled(std::string_view name);

}  // namespace kbvqa::json_schema
