#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "lfd/error.hpp"

namespace lfd {

using Json = nlohmann::json;

/// Reads fields out of a JSON object and rejects any key it was not asked
/// about. Missing keys leave the destination at its default.
class StrictObject {
public:
    StrictObject(const Json& object, std::string context) : object_(object), context_(std::move(context)) {
        require(object_.is_object(), ErrorKind::InvalidConfig, context_ + ": expected an object");
    }

    template <class T>
    StrictObject& optional(const std::string& key, T& out) {
        seen_.insert(key);
        if (auto it = object_.find(key); it != object_.end()) {
            try {
                out = it->template get<T>();
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::InvalidConfig, context_ + "." + key + ": " + e.what());
            }
        }
        return *this;
    }

    template <class T>
    StrictObject& required(const std::string& key, T& out) {
        require(object_.contains(key), ErrorKind::InvalidConfig, context_ + "." + key + ": missing required field");
        return optional(key, out);
    }

    bool has(const std::string& key) const { return object_.contains(key); }

    const Json& child(const std::string& key) {
        seen_.insert(key);
        return object_.at(key);
    }

    std::string path(const std::string& key) const { return context_ + "." + key; }

    void finish() const {
        for (const auto& [key, value] : object_.items()) {
            require(seen_.count(key) > 0, ErrorKind::InvalidConfig, context_ + "." + key + ": unknown field");
        }
    }

private:
    const Json& object_;
    std::string context_;
    std::set<std::string> seen_;
};

}  // namespace lfd
