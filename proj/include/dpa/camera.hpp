#pragma once

#include <Eigen/Geometry>

#include <cmath>

#include "dpa/common.hpp"

// Pinhole cameras in OpenCV convention: camera x right, y down, z forward;
// pixel (u,v) back-projects to direction ((u-cx)/fx, (v-cy)/fy, 1) in camera
// space. Poses are stored world-to-camera.

namespace dpa {

struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
  Index width = 0, height = 0;

  Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }

  // Camera center in world space: -R^T t.
  Vec3 center() const { return -(rotation().transpose() * translation()); }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw ValidationError("Camera: focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw ValidationError("Camera: raster dimensions must be positive");
    if (!world_to_camera.allFinite())
      throw ValidationError("Camera: non-finite pose");
    const Eigen::Matrix3d R = rotation();
    if ((R * R.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw ValidationError("Camera: rotation block is not orthonormal");
    const Eigen::RowVector4d bottom = world_to_camera.row(3);
    if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
      throw ValidationError("Camera: last pose row must be (0,0,0,1)");
  }

  // World-space unit ray through the center of pixel (u,v).
  void pixel_ray(double u, double v, Vec3& origin, Vec3& dir) const {
    const Vec3 dir_cam((u - cx) / fx, (v - cy) / fy, 1.0);
    dir = (rotation().transpose() * dir_cam).normalized();
    origin = center();
  }

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& world_up,
                        double focal, Index width, Index height) {
    const Vec3 zc = (target - eye).normalized();
    Vec3 xc = zc.cross(world_up);
    if (xc.norm() < 1e-9)
      throw ValidationError("Camera: view direction parallel to up vector");
    xc.normalize();
    const Vec3 yc = zc.cross(xc);

    Camera cam;
    cam.fx = cam.fy = focal;
    cam.cx = (width - 1) / 2.0;
    cam.cy = (height - 1) / 2.0;
    cam.width = width;
    cam.height = height;
    Eigen::Matrix3d R;
    R.row(0) = xc.transpose();
    R.row(1) = yc.transpose();
    R.row(2) = zc.transpose();
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = R;
    cam.world_to_camera.topRightCorner<3, 1>() = -R * eye;
    return cam;
  }
};

// Intersection of a ray with the sphere |x| = radius. Returns false on miss;
// on hit, [t0,t1] is the clamped-to-forward parameter interval.
inline bool ray_sphere(const Vec3& origin, const Vec3& dir, double radius,
                       double& t0, double& t1) {
  const double b = origin.dot(dir);
  const double c = origin.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0.0) return false;
  const double s = std::sqrt(disc);
  t0 = -b - s;
  t1 = -b + s;
  if (t1 <= 0.0) return false;  // sphere entirely behind
  t0 = std::max(t0, 0.0);
  return t0 < t1;
}

}  // namespace dpa
