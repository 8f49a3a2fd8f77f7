#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "povid/dispref.hpp"
#include "povid/errors.hpp"

#include "httplib.h"
#include "json.hpp"

namespace povid {

namespace {

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

// Splits "http://host:port/path" into (scheme://host:port, /path).
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos) throw AnnotatorError("endpoint missing scheme: " + endpoint);
    const auto path = endpoint.find('/', scheme + 3);
    if (path == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path), endpoint.substr(path)};
}

}  // namespace

AnnotatorClient make_remote_client(const AnnotatorConfig& config) {
    if (config.endpoint.empty())
        throw AnnotatorError("remote annotator requires an endpoint (POVID_ANNOTATOR_URL)");
    const auto [host, path] = split_endpoint(config.endpoint);
    if (!config.cache_dir.empty()) std::filesystem::create_directories(config.cache_dir);

    return [config, host, path](const std::string& prompt_body) -> std::string {
        std::filesystem::path cache_file;
        if (!config.cache_dir.empty()) {
            cache_file = std::filesystem::path(config.cache_dir) /
                         (fnv1a_hex(prompt_body) + ".json");
            std::ifstream in(cache_file);
            if (in) {
                nlohmann::json cached = nlohmann::json::parse(in, nullptr, false);
                if (!cached.is_discarded() && cached.contains("text"))
                    return cached["text"].get<std::string>();
            }
        }

        nlohmann::json body;
        body["prompt"] = prompt_body;
        const std::string payload = body.dump();

        std::string last_error = "no attempt made";
        for (int attempt = 0; attempt <= config.retries; ++attempt) {
            httplib::Client client(host);
            client.set_connection_timeout(config.timeout_ms / 1000,
                                          (config.timeout_ms % 1000) * 1000);
            client.set_read_timeout(config.timeout_ms / 1000,
                                    (config.timeout_ms % 1000) * 1000);
            httplib::Headers headers;
            if (!config.api_key.empty())
                headers.emplace("Authorization", "Bearer " + config.api_key);
            auto res = client.Post(path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport failure: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_error = "http status " + std::to_string(res->status);
                continue;
            }
            nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
            if (reply.is_discarded() || !reply.contains("text")) {
                last_error = "reply is not a JSON object with a text field";
                continue;
            }
            const std::string text = reply["text"].get<std::string>();
            if (!cache_file.empty()) {
                nlohmann::json cached;
                cached["text"] = text;
                std::ofstream out(cache_file);
                out << cached.dump();
            }
            return text;
        }
        throw AnnotatorError("annotator request failed after " +
                             std::to_string(config.retries + 1) + " attempts: " + last_error);
    };
}

}  // namespace povid
