#include "kbvqa/json_schema.hpp"

#include <map>
#include <mutex>

#include "resources.hpp"

namespace kbvqa::json_schema {

using nlohmann::json;

namespace {

bool matches_type(const json& instance, const std::string& type) {
  if (type == "object") return instance.is_object();
  if (type == "array") return instance.is_array();
  if (type == "string") return instance.is_string();
  if (type == "number") return instance.is_number();
  if (type == "integer") return instance.is_number_integer();
  if (type == "boolean") return instance.is_boolean();
  if (type == "null") return instance.is_null();
  return false;
}

void check(const json& root, const json& schema, const json& instance, const std::string& path,
           std::vector<std::string>& errors) {
  if (!schema.is_object()) return;
  const auto at = [&](const std::string& msg) { errors.push_back((path.empty() ? "$" : path) + ": " + msg); };

  if (auto it = schema.find("$ref"); it != schema.end() && it->is_string()) {
    const std::string ref = it->get<std::string>();
    if (ref.rfind("#/", 0) != 0) {
      at("unsupported $ref " + ref);
      return;
    }
    const json::json_pointer ptr(ref.substr(1));
    if (!root.contains(ptr)) {
      at("unresolved $ref " + ref);
      return;
    }
    check(root, root.at(ptr), instance, path, errors);
  }

  if (auto it = schema.find("type"); it != schema.end()) {
    bool ok = false;
    if (it->is_string()) {
      ok = matches_type(instance, it->get<std::string>());
    } else if (it->is_array()) {
      for (const auto& t : *it) ok = ok || matches_type(instance, t.get<std::string>());
    }
    if (!ok) {
      at("expected type " + it->dump() + ", got " + instance.type_name());
      return;
    }
  }

  if (auto it = schema.find("enum"); it != schema.end() && it->is_array()) {
    bool found = false;
    for (const auto& v : *it) found = found || v == instance;
    if (!found) at("value " + instance.dump() + " not in enum " + it->dump());
  }

  if (instance.is_number()) {
    const double v = instance.get<double>();
    if (auto it = schema.find("minimum"); it != schema.end() && v < it->get<double>()) {
      at("value " + instance.dump() + " below minimum " + it->dump());
    }
    if (auto it = schema.find("maximum"); it != schema.end() && v > it->get<double>()) {
      at("value " + instance.dump() + " above maximum " + it->dump());
    }
  }

  if (instance.is_string()) {
    if (auto it = schema.find("minLength");
        it != schema.end() && instance.get_ref<const std::string&>().size() < it->get<std::size_t>()) {
      at("string shorter than " + it->dump());
    }
  }

  if (instance.is_array()) {
    if (auto it = schema.find("minItems"); it != schema.end() && instance.size() < it->get<std::size_t>()) {
      at("expected at least " + it->dump() + " items, got " + std::to_string(instance.size()));
    }
    if (auto it = schema.find("maxItems"); it != schema.end() && instance.size() > it->get<std::size_t>()) {
      at("expected at most " + it->dump() + " items, got " + std::to_string(instance.size()));
    }
    if (auto it = schema.find("items"); it != schema.end()) {
      for (std::size_t i = 0; i < instance.size(); ++i) {
        check(root, *it, instance[i], path + "[" + std::to_string(i) + "]", errors);
      }
    }
  }

  if (instance.is_object()) {
    if (auto it = schema.find("required"); it != schema.end()) {
      for (const auto& key : *it) {
        if (!instance.contains(key.get<std::string>())) at("missing required property '" + key.get<std::string>() + "'");
      }
    }
    if (auto it = schema.find("minProperties"); it != schema.end() && instance.size() < it->get<std::size_t>()) {
      at("expected at least " + it->dump() + " properties");
    }
    if (auto it = schema.find("maxProperties"); it != schema.end() && instance.size() > it->get<std::size_t>()) {
      at("expected at most " + it->dump() + " properties");
    }
    const json empty = json::object();
    const auto props_it = schema.find("properties");
    const json& props = props_it != schema.end() ? *props_it : empty;
    const auto additional = schema.find("additionalProperties");
    for (const auto& [key, value] : instance.items()) {
      const std::string child = path + "." + key;
      if (auto p = props.find(key); p != props.end()) {
        check(root, *p, value, child, errors);
      } else if (additional != schema.end()) {
        if (additional->is_boolean() && !additional->get<bool>()) {
          at("unexpected property '" + key + "'");
        } else if (additional->is_object()) {
          check(root, *additional, value, child, errors);
        }
      }
    }
  }
}

}  // namespace

std::vector<std::string> validate(const json& schema, const json& instance) {
  std::vector<std::string> errors;
  check(schema, schema, instance, "", errors);
  return errors;
}

const json& bundled(std::string_view name) {
  static std::mutex mu;
  static std::map<std::string, json, std::less<>> parsed;
  std::lock_guard lock(mu);
  if (auto it = parsed.find(name); it != parsed.end()) return it->second;
  auto [it, _] = parsed.emplace(std::string(name), json::parse(resources::get(name)));
  return it->second;
}

}  // namespace kbvqa::json_schema
