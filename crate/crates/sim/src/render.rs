//! Toy sensors: a forward raster camera and a planar 360 degree LiDAR.

use sfse_core::sensors::{CameraFrame, Point3, PointCloud, CAMERA_CHANNELS, CAMERA_HEIGHT, CAMERA_WIDTH};
use sfse_core::Tensor;

use crate::dynamics::EgoState;
use crate::geometry::{ray_circle, segment_param, to_local, Vec2};
use crate::world::{World, NPC_HEIGHT, PEDESTRIAN_HEIGHT, PEDESTRIAN_RADIUS};

pub const MAX_RANGE: f64 = 40.0;
pub const HALF_FOV_DEG: f64 = 60.0;
pub const HORIZON_ROW: f64 = 32.0;
pub const CAMERA_MOUNT: f64 = 1.5;
/// Vertical focal length in pixels.
pub const FOCAL: f64 = 40.0;
pub const LIDAR_RAYS: usize = 360;

const CH_ROUTE: usize = 0;
const CH_STATIC: usize = 1;
const CH_DYNAMIC: usize = 2;

/// Bearing of image column `j` relative to the heading, positive to the left.
pub fn column_angle(j: usize) -> f64 {
    (HALF_FOV_DEG - 2.0 * HALF_FOV_DEG * (j as f64 + 0.5) / CAMERA_WIDTH as f64).to_radians()
}

/// Bearing of LiDAR ray `k`, counter-clockwise from the heading.
pub fn lidar_angle(k: usize) -> f64 {
    (k as f64 + 0.5).to_radians() * (360.0 / LIDAR_RAYS as f64)
}

pub fn intensity(distance: f64) -> f64 {
    1.0 / (1.0 + 0.05 * distance)
}

/// Nearest solid entity along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub height: f64,
    pub dynamic: bool,
}

/// Casts a ray against every obstacle, vehicle and pedestrian at time `t`.
pub fn cast(world: &World, t: f64, origin: Vec2, dir: Vec2, max_range: f64) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |d: Option<f64>, height: f64, dynamic: bool| {
        if let Some(d) = d {
            if d <= max_range && best.is_none_or(|b| d < b.distance) {
                best = Some(Hit {
                    distance: d,
                    height,
                    dynamic,
                });
            }
        }
    };
    for o in &world.obstacles {
        consider(o.rect.as_obb().ray_hit(origin, dir), o.height, false);
    }
    for n in &world.npcs {
        consider(n.footprint(t).ray_hit(origin, dir), NPC_HEIGHT, true);
    }
    for p in &world.pedestrians {
        consider(
            ray_circle(origin, dir, p.path.position(t), PEDESTRIAN_RADIUS),
            PEDESTRIAN_HEIGHT,
            true,
        );
    }
    best
}

/// Image row of a point at `distance` and height `z`; may lie outside the image.
fn row_of(distance: f64, z: f64) -> f64 {
    HORIZON_ROW - FOCAL * (z - CAMERA_MOUNT) / distance
}

/// Ground distance seen by pixel row `r` (below the horizon only).
fn ground_distance(r: usize) -> Option<f64> {
    let below = r as f64 + 0.5 - HORIZON_ROW;
    (below > 0.0).then(|| FOCAL * CAMERA_MOUNT / below)
}

/// Forward raster. Channel 0 paints route ground within the lane, channel 1
/// static obstacles and channel 2 moving agents, each column showing the
/// nearest entity along its bearing.
pub fn render_camera(world: &World, ego: &EgoState, t: f64) -> CameraFrame {
    let (h, w) = (CAMERA_HEIGHT, CAMERA_WIDTH);
    let mut img = vec![0.0f32; CAMERA_CHANNELS * h * w];
    let origin = ego.position();
    // route segments that can be visible at all
    let segs: Vec<(Vec2, Vec2)> = world
        .route
        .points
        .windows(2)
        .filter(|s| (s[0] - origin).norm() <= MAX_RANGE + world.lane_halfwidth + 1.0)
        .map(|s| (s[0], s[1]))
        .collect();
    for j in 0..w {
        let dir = Vec2::from_angle(ego.yaw + column_angle(j));
        let hit = cast(world, t, origin, dir, MAX_RANGE);
        let mut covered = (usize::MAX, 0usize);
        if let Some(hit) = hit {
            let ch = if hit.dynamic { CH_DYNAMIC } else { CH_STATIC };
            let top = row_of(hit.distance, hit.height).floor().max(0.0);
            let bottom = row_of(hit.distance, 0.0).ceil().min(h as f64);
            if top < bottom {
                let (top, bottom) = (top as usize, bottom as usize);
                let v = intensity(hit.distance) as f32;
                for r in top..bottom {
                    img[(ch * h + r) * w + j] = v;
                }
                covered = (top, bottom);
            }
        }
        for r in 0..h {
            let Some(d) = ground_distance(r) else { continue };
            if d > MAX_RANGE {
                continue;
            }
            let occluded = (covered.0..covered.1).contains(&r) && hit.is_some_and(|x| x.distance < d);
            if occluded {
                continue;
            }
            let p = origin + dir * d;
            let on_route = segs.iter().any(|&(a, b)| {
                let q = a + (b - a) * segment_param(p, a, b);
                (p - q).norm() <= world.lane_halfwidth
            });
            if on_route {
                img[(CH_ROUTE * h + r) * w + j] = intensity(d) as f32;
            }
        }
    }
    CameraFrame {
        tensor: Tensor::new(vec![CAMERA_CHANNELS, h, w], img).expect("camera buffer matches shape"),
    }
}

/// Planar scan; each hit returns three points stacked up the entity.
pub fn render_lidar(world: &World, ego: &EgoState, t: f64) -> PointCloud {
    let origin = ego.position();
    let mut points = Vec::new();
    for k in 0..LIDAR_RAYS {
        let dir = Vec2::from_angle(ego.yaw + lidar_angle(k));
        if let Some(hit) = cast(world, t, origin, dir, MAX_RANGE) {
            let local = to_local(origin + dir * hit.distance, origin, ego.yaw);
            for z in [0.2, hit.height / 2.0, hit.height - 0.1] {
                points.push(Point3 {
                    x: local.x,
                    y: local.y,
                    z: z.max(0.2),
                });
            }
        }
    }
    PointCloud { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Polyline};
    use crate::world::StaticObstacle;

    fn straight_world() -> World {
        World::bare(
            Polyline::new((0..=100).map(|i| Vec2::new(i as f64, 0.0)).collect()),
            2.0,
        )
    }

    fn ego() -> EgoState {
        EgoState {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            speed: 0.0,
        }
    }

    #[test]
    fn empty_world_has_no_entities() {
        let img = render_camera(&straight_world(), &ego(), 0.0);
        let d = img.tensor.data();
        let plane = CAMERA_HEIGHT * CAMERA_WIDTH;
        assert!(d[plane..].iter().all(|&v| v == 0.0));
        assert!(d[..plane].iter().any(|&v| v > 0.0));
        assert!(render_lidar(&straight_world(), &ego(), 0.0).points.is_empty());
    }

    #[test]
    fn obstacle_ahead_is_centered() {
        let mut w = straight_world();
        w.obstacles.push(StaticObstacle {
            rect: Aabb {
                min: Vec2::new(10.0, -1.0),
                max: Vec2::new(11.0, 1.0),
            },
            height: 1.5,
        });
        let img = render_camera(&w, &ego(), 0.0);
        let cols: Vec<usize> = (0..CAMERA_WIDTH)
            .filter(|&j| (0..CAMERA_HEIGHT).any(|r| img.tensor.at(&[1, r, j]) > 0.0))
            .collect();
        assert!(!cols.is_empty());
        let mean = cols.iter().sum::<usize>() as f64 / cols.len() as f64;
        // columns 63 and 64 straddle the optical axis
        assert!((mean - 63.5).abs() <= 0.5, "{cols:?}");
        assert!(cols.contains(&64) && cols.contains(&63));
        // hand projection: rows from the top (1.5 m) to the ground
        let v = img.tensor.at(&[1, 33, 64]);
        let slant = 10.0 / column_angle(64).cos();
        assert!((v as f64 - intensity(slant)).abs() < 1e-6);
        let top = (HORIZON_ROW - FOCAL * (1.5 - CAMERA_MOUNT) / 10.0).floor() as usize;
        let bottom = (HORIZON_ROW + FOCAL * CAMERA_MOUNT / 10.0).ceil() as usize;
        for r in 0..CAMERA_HEIGHT {
            let on = img.tensor.at(&[1, r, 64]) > 0.0;
            assert_eq!(on, (top..bottom).contains(&r), "row {r}");
        }
    }

    #[test]
    fn wall_spanning_ten_degrees_gives_thirty_points() {
        let mut w = straight_world();
        // a thin wall at x = 10 between bearings 0 and 10 degrees
        let y_hi = 10.0 * 10f64.to_radians().tan();
        w.obstacles.push(StaticObstacle {
            rect: Aabb {
                min: Vec2::new(10.0, 0.0),
                max: Vec2::new(10.05, y_hi),
            },
            height: 3.0,
        });
        let pc = render_lidar(&w, &ego(), 0.0);
        assert_eq!(pc.points.len(), 30);
        assert!(pc.points.iter().all(|p| p.x.hypot(p.y) <= MAX_RANGE));
        let zs: Vec<f64> = pc.points[..3].iter().map(|p| p.z).collect();
        assert_eq!(zs, [0.2, 1.5, 2.9]);
    }

    #[test]
    fn far_entities_are_invisible() {
        let mut w = straight_world();
        w.obstacles.push(StaticObstacle {
            rect: Aabb {
                min: Vec2::new(41.0, -1.0),
                max: Vec2::new(42.0, 1.0),
            },
            height: 3.0,
        });
        assert!(render_lidar(&w, &ego(), 0.0).points.is_empty());
        let img = render_camera(&w, &ego(), 0.0);
        let plane = CAMERA_HEIGHT * CAMERA_WIDTH;
        assert!(img.tensor.data()[plane..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn renders_are_deterministic_and_bounded() {
        let w = crate::world::generate_world(4, &crate::world::WorldConfig::default()).unwrap();
        let e = EgoState {
            x: 20.0,
            y: 0.5,
            yaw: 0.1,
            speed: 5.0,
        };
        let a = render_camera(&w, &e, 3.0);
        assert_eq!(a, render_camera(&w, &e, 3.0));
        assert!(a.tensor.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(render_lidar(&w, &e, 3.0), render_lidar(&w, &e, 3.0));
    }
}
