#include "psim/annotation_server.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>

namespace psim {

struct AnnotationServer::Impl {
  AnnotationService& service;
  std::filesystem::path image_root;
  httplib::Server server;

  Impl(AnnotationService& s, std::filesystem::path root) : service(s), image_root(std::move(root)) {}
};

namespace {

void reply(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationService& service, std::filesystem::path image_root,
                                   std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(service, std::move(image_root))) {
  auto& srv = impl_->server;
  Impl* impl = impl_.get();

  srv.Get("/api/session", [impl](const httplib::Request& req, httplib::Response& res) {
    const std::string kind = req.has_param("kind") ? req.get_param_value("kind") : "2afc";
    const std::string worker = req.has_param("worker") ? req.get_param_value("worker") : "";
    reply(res, impl->service.create_session(kind, worker));
  });

  srv.Post("/api/judgment", [impl](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      reply(res, {400, {{"error", "body is not valid JSON"}}});
      return;
    }
    reply(res, impl->service.post_judgment(body));
  });

  srv.Post("/api/round/advance", [impl](const httplib::Request&, httplib::Response& res) {
    reply(res, impl->service.advance_round());
  });

  srv.Get("/api/state", [impl](const httplib::Request&, httplib::Response& res) {
    reply(res, impl->service.state());
  });

  srv.Get("/api/export", [impl](const httplib::Request&, httplib::Response& res) {
    res.set_content(impl->service.export_snapshot(), "application/x-ndjson");
  });

  srv.Get(R"(/api/image/([0-9a-f]+))", [impl](const httplib::Request& req, httplib::Response& res) {
    const auto path = impl->service.image_path(req.matches[1].str());
    if (!path) {
      reply(res, {404, {{"error", "unknown image"}}});
      return;
    }
    std::ifstream in(impl->image_root / *path, std::ios::binary);
    if (!in) {
      reply(res, {404, {{"error", "image file missing"}}});
      return;
    }
    std::ostringstream data;
    data << in.rdbuf();
    res.set_content(data.str(), "image/png");
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    reply(res, {500, {{"error", message}}});
  });

  if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) srv.set_mount_point("/", static_dir.string());
}

AnnotationServer::~AnnotationServer() { stop(); }

bool AnnotationServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int AnnotationServer::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool AnnotationServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void AnnotationServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace psim
