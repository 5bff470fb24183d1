#include "hpl/errors.hpp"
#include "hpl/prefgen.hpp"

// httplib pulls in system resolver headers whose macros clash with Eigen's
// internals, so it must come after every header that includes Eigen.
#include <httplib.h>

namespace hpl {

HttpSegmenter::HttpSegmenter(std::string endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.empty()) throw ConfigError("segmenter endpoint is empty");
}

std::string HttpSegmenter::segment_raw(const Trajectory& traj) {
    // Split "scheme://host:port/path" into client base and request path.
    std::string base = endpoint_;
    std::string path = "/";
    const auto scheme = endpoint_.find("://");
    const auto slash =
        endpoint_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
        base = endpoint_.substr(0, slash);
        path = endpoint_.substr(slash);
    }

    nlohmann::json actions = nlohmann::json::array();
    for (const auto& s : traj.steps) actions.push_back(std::to_string(s.action));
    const nlohmann::json body{{"actions", std::move(actions)},
                              {"num_actions", static_cast<int>(traj.steps.size())}};

    httplib::Client client(base);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(30, 0);
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res)
        throw TransportError("segmenter request to " + endpoint_ + " failed: " +
                             httplib::to_string(res.error()));
    if (res->status != 200)
        throw TransportError("segmenter at " + endpoint_ + " returned status " +
                             std::to_string(res->status));
    return res->body;
}

} // namespace hpl
