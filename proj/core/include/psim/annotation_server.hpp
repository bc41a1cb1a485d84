#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "psim/annotation_service.hpp"

namespace psim {

/// HTTP front end for an AnnotationService:
///   GET  /api/session?kind=2afc|jnd[&worker=ID]
///   POST /api/judgment
///   POST /api/round/advance
///   GET  /api/export
///   GET  /api/state
///   GET  /api/image/<token>
/// plus the UI bundle from static_dir (when given) under "/".
class AnnotationServer {
 public:
  /// Image paths in the pool are resolved against image_root.
  AnnotationServer(AnnotationService& service, std::filesystem::path image_root,
                   std::filesystem::path static_dir = {});
  ~AnnotationServer();

  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds and serves until stop(); returns false when binding fails.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it (or -1); serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace psim
