/// Mean Earth radius in meters, used by the haversine distance.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeoFrame {
    /// Local planar frame in meters.
    Planar,
    /// Latitude/longitude in degrees, haversine distance.
    Spherical,
}

/// Geographic position of an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeoTag {
    Planar { x: f64, y: f64 },
    Spherical { lat: f64, lon: f64 },
}

impl GeoTag {
    pub fn planar(x: f64, y: f64) -> Self {
        GeoTag::Planar { x, y }
    }

    pub fn spherical(lat: f64, lon: f64) -> Self {
        GeoTag::Spherical { lat, lon }
    }

    pub fn frame(&self) -> GeoFrame {
        match self {
            GeoTag::Planar { .. } => GeoFrame::Planar,
            GeoTag::Spherical { .. } => GeoFrame::Spherical,
        }
    }

    pub fn coords(&self) -> (f64, f64) {
        match *self {
            GeoTag::Planar { x, y } => (x, y),
            GeoTag::Spherical { lat, lon } => (lat, lon),
        }
    }

    /// Distance in meters.
    ///
    /// # Panics
    ///
    /// Panics when the two tags use different frames. Collections of tags are
    /// validated for a single frame when they are built.
    pub fn distance(&self, other: &GeoTag) -> f64 {
        match (*self, *other) {
            (GeoTag::Planar { x: x1, y: y1 }, GeoTag::Planar { x: x2, y: y2 }) => {
                (x1 - x2).hypot(y1 - y2)
            }
            (GeoTag::Spherical { lat: a1, lon: o1 }, GeoTag::Spherical { lat: a2, lon: o2 }) => {
                if a1 == a2 && o1 == o2 {
                    return 0.0;
                }
                let (p1, p2) = (a1.to_radians(), a2.to_radians());
                let dp = p2 - p1;
                let dl = (o2 - o1).to_radians();
                let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
            }
            _ => panic!("geotag frames differ"),
        }
    }
}

/// Checks that every tag shares one frame.
pub(crate) fn common_frame<'a>(
    tags: impl IntoIterator<Item = &'a GeoTag>,
) -> crate::Result<Option<GeoFrame>> {
    let mut frame = None;
    for t in tags {
        match frame {
            None => frame = Some(t.frame()),
            Some(f) if f != t.frame() => return Err(crate::Error::MixedGeoFrames),
            _ => {}
        }
    }
    Ok(frame)
}
