//! JSON and SVG emitters shared by the analyses and the CLI.

use std::fmt::Write as _;
use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

/// Pretty JSON formatter that prints every float with 17 significant digits.
pub struct Exact17<'a>(PrettyFormatter<'a>);

impl Default for Exact17<'_> {
    fn default() -> Self {
        Exact17(PrettyFormatter::with_indent(b"  "))
    }
}

macro_rules! delegate {
    ($($name:ident $( ( $($arg:ident : $ty:ty),* ) )?;)*) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $($(, $arg: $ty)*)?) -> io::Result<()> {
                self.0.$name(w $($(, $arg)*)?)
            }
        )*
    };
}

impl Formatter for Exact17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate! {
        begin_array;
        end_array;
        begin_array_value(first: bool);
        end_array_value;
        begin_object;
        end_object;
        begin_object_key(first: bool);
        begin_object_value;
        end_object_value;
    }
}

/// Serialize with [`Exact17`]; the output ends with a newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Exact17::default());
    value
        .serialize(&mut ser)
        .expect("serializing into memory cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// `{tool, version, command, config, result}` wrapper of a command output.
pub fn envelope(command: &str, config: Value, result: Value) -> Value {
    serde_json::json!({
        "tool": "matdist",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "result": result,
    })
}

/// Fill colours of grades 0..=3; unknown grades are grey.
pub fn grade_color(grade: i64) -> &'static str {
    match grade {
        0 => "black",
        1 => "blue",
        2 => "orange",
        3 => "green",
        _ => "#bbbbbb",
    }
}

pub const SVG_SIZE: f64 = 720.0;

/// Minimal SVG canvas with a fixed 720x720 viewBox. Data coordinates in
/// `[lo, hi]^2` map onto the canvas with a small margin, `y` pointing up.
pub struct SvgCanvas {
    lo: [f64; 2],
    hi: [f64; 2],
    body: String,
}

impl SvgCanvas {
    const MARGIN: f64 = 20.0;

    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        let mut hi = hi;
        for k in 0..2 {
            if hi[k] <= lo[k] {
                hi[k] = lo[k] + 1.0;
            }
        }
        SvgCanvas {
            lo,
            hi,
            body: String::new(),
        }
    }

    pub fn scale(&self) -> [f64; 2] {
        let span = SVG_SIZE - 2.0 * Self::MARGIN;
        [
            span / (self.hi[0] - self.lo[0]),
            span / (self.hi[1] - self.lo[1]),
        ]
    }

    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.scale();
        [
            Self::MARGIN + (p[0] - self.lo[0]) * s[0],
            SVG_SIZE - Self::MARGIN - (p[1] - self.lo[1]) * s[1],
        ]
    }

    /// Axis-aligned cell of data size `w x h` centred at `p`.
    pub fn cell(&mut self, p: [f64; 2], w: f64, h: f64, fill: &str) {
        let s = self.scale();
        let c = self.map(p);
        let (pw, ph) = (w * s[0], h * s[1]);
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{fill}"/>"#,
            c[0] - pw / 2.0,
            c[1] - ph / 2.0,
            pw,
            ph
        );
    }

    pub fn dot(&mut self, p: [f64; 2], radius: f64, fill: &str) {
        let c = self.map(p);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{radius:.3}" fill="{fill}"/>"#,
            c[0], c[1]
        );
    }

    pub fn polyline(&mut self, pts: &[[f64; 2]], stroke: &str) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|p| {
                let c = self.map(*p);
                format!("{:.3},{:.3}", c[0], c[1])
            })
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1"/>"#,
            coords.join(" ")
        );
    }

    pub fn label(&mut self, text: &str) {
        let escaped = text
            .replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="4" y="14" font-family="monospace" font-size="12">{escaped}</text>"#
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 720 720\" width=\"720\" height=\"720\">\n\
             <rect width=\"720\" height=\"720\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_use_seventeen_digits() {
        let s = to_json_string(&json!({"a": 0.1, "b": 3, "c": -1e-7}));
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"b\": 3"), "{s}");
        assert!(s.contains("-9.9999999999999995e-8"), "{s}");
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64().unwrap(), 0.1);
    }

    #[test]
    fn non_finite_becomes_null() {
        let s = to_json_string(&[f64::INFINITY, f64::NAN]);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert!(back[0].is_null() && back[1].is_null());
    }

    #[test]
    fn svg_has_fixed_viewbox() {
        let mut c = SvgCanvas::new([-1.0, -1.0], [1.0, 1.0]);
        c.cell([0.0, 0.0], 0.1, 0.1, grade_color(2));
        c.label("a < b");
        let svg = c.finish();
        assert!(svg.contains("viewBox=\"0 0 720 720\""));
        assert!(svg.contains("orange"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(c_map_centre(), [360.0, 360.0]);
    }

    fn c_map_centre() -> [f64; 2] {
        SvgCanvas::new([-1.0, -1.0], [1.0, 1.0]).map([0.0, 0.0])
    }
}
