"""
On-disk dataset layout shared by the simulator, the pipeline stages and the
evaluator. Every file is space-separated text with '#' comment lines; floats
use 17 significant digits and timestamps are integer nanoseconds, so a read
followed by a write reproduces the files byte for byte.

    sensors.txt        sensor_id kind [width height fx fy cx cy k1 k2]
    rig.txt            sensor_id qw qx qy qz tx ty tz            (T_B_sensor)
    sequences.txt      sequence_id qw qx qy qz tx ty tz          (coarse alignment)
    odometry.txt       sequence_id timestamp_ns qw qx qy qz tx ty tz
    trajectory.txt     sequence_id timestamp_ns qw qx qy qz tx ty tz
    images.txt         image_id camera_id sequence_id timestamp_ns optimize qw qx qy qz tx ty tz
    observations.txt   image_id landmark_id u v active
    landmarks.txt      landmark_id triangulated x y z
    graph.txt          NODE / EDGE records
    scans/<sequence>/<lidar>_<timestamp>.txt
    clouds/<node_id>.txt | .bin
    splines/<sequence>.txt
    report.txt, images/<image_id>.pgm, ground_truth/, queries/
"""

import shutil
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.bundle.problem import ImageRecord, Landmark, Observation
from src.errors import DataError, TrajforgeError
from src.geometry.camera import CameraIntrinsics
from src.geometry.se3 import Se3Pose
from src.localize.lowfreq import GrayImage, read_pgm, write_pgm
from src.pointcloud.cloud import LidarScan, OdometryTrack, PointCloud
from src.posegraph.graph import EdgeKind, GraphEdge, GraphNode, PoseGraph
from src.spline.se3_spline import Se3Spline
from src.utils import fmt, sanitize_filename

PathLike = Union[str, Path]

POSE_HEADER = "qw qx qy qz tx ty tz"
HEADERS = {
    "sensors.txt": "# sensor_id kind [width height fx fy cx cy k1 k2]",
    "rig.txt": f"# sensor_id {POSE_HEADER}",
    "sequences.txt": f"# sequence_id {POSE_HEADER}",
    "odometry.txt": f"# sequence_id timestamp_ns {POSE_HEADER}",
    "trajectory.txt": f"# sequence_id timestamp_ns {POSE_HEADER}",
    "images.txt": f"# image_id camera_id sequence_id timestamp_ns optimize {POSE_HEADER}",
    "observations.txt": "# image_id landmark_id u v active",
    "landmarks.txt": "# landmark_id triangulated x y z",
    "outliers.txt": "# image_id landmark_id",
    "graph.txt": (f"# NODE node_id sequence_id timestamp_ns fixed {POSE_HEADER}\n"
                  f"# EDGE from_id to_id kind {POSE_HEADER} information_upper_triangle[21]"),
}
CLOUD_MAGIC = b"TFPC"
CLOUD_HEADER = struct.Struct("<4sIII")  # magic, point count, columns, reserved
UPPER = np.triu_indices(6)

Trajectory = Dict[str, List[Tuple[int, Se3Pose]]]


@dataclass
class GroundTruth:
    cameras: Dict[str, CameraIntrinsics] = field(default_factory=dict)
    lidars: List[str] = field(default_factory=list)
    rig: Dict[str, Se3Pose] = field(default_factory=dict)
    trajectory: Trajectory = field(default_factory=dict)
    images: Dict[str, ImageRecord] = field(default_factory=dict)
    landmarks: Dict[str, Landmark] = field(default_factory=dict)
    outliers: List[Tuple[str, str]] = field(default_factory=list)


@dataclass
class Dataset:
    cameras: Dict[str, CameraIntrinsics] = field(default_factory=dict)
    lidars: List[str] = field(default_factory=list)
    rig: Dict[str, Se3Pose] = field(default_factory=dict)
    sequences: Dict[str, Se3Pose] = field(default_factory=dict)
    odometry: Dict[str, OdometryTrack] = field(default_factory=dict)
    trajectory: Trajectory = field(default_factory=dict)
    images: Dict[str, ImageRecord] = field(default_factory=dict)
    observations: List[Observation] = field(default_factory=list)
    landmarks: Dict[str, Landmark] = field(default_factory=dict)
    scans: Dict[str, List[LidarScan]] = field(default_factory=dict)
    graph: Optional[PoseGraph] = None
    splines: Dict[str, Se3Spline] = field(default_factory=dict)
    report: Optional[str] = None
    pictures: Dict[str, GrayImage] = field(default_factory=dict)
    ground_truth: Optional[GroundTruth] = None
    queries: Optional["Dataset"] = None
    binary_clouds: bool = False

    def validate(self, root: Optional[PathLike] = None) -> None:
        """
        Check every id cross-reference.

        Raises:
            DataError: dangling id (located in the referencing file when root is given)
        """
        def where(name: str) -> Optional[str]:
            return None if root is None else str(Path(root) / name)

        for sensor_id in list(self.cameras) + self.lidars:
            if sensor_id not in self.rig:
                raise DataError(f"sensor '{sensor_id}' has no rig pose", where("rig.txt"))
        for name, seqs in (("odometry.txt", self.odometry), ("trajectory.txt", self.trajectory),
                           ("splines", self.splines), ("scans", self.scans)):
            for sequence_id in seqs:
                if sequence_id not in self.sequences:
                    raise DataError(f"unknown sequence '{sequence_id}'", where(name))
        for line, image in enumerate(self.images.values(), start=2):
            if image.camera_id not in self.cameras:
                raise DataError(f"image '{image.image_id}' references unknown camera '{image.camera_id}'",
                                where("images.txt"), line, 2)
            if image.sequence_id not in self.sequences:
                raise DataError(f"image '{image.image_id}' references unknown sequence '{image.sequence_id}'",
                                where("images.txt"), line, 3)
        for line, obs in enumerate(self.observations, start=2):
            if obs.image_id not in self.images:
                raise DataError(f"observation references unknown image '{obs.image_id}'",
                                where("observations.txt"), line, 1)
            if obs.landmark_id not in self.landmarks:
                raise DataError(f"observation references unknown landmark '{obs.landmark_id}'",
                                where("observations.txt"), line, 2)
        for sequence_id, scans in self.scans.items():
            for scan in scans:
                if scan.lidar_id not in self.lidars:
                    raise DataError(f"scan references unknown lidar '{scan.lidar_id}'",
                                    where(f"scans/{sequence_id}"))
        if self.graph is not None:
            for node in self.graph.nodes.values():
                if node.sequence_id not in self.sequences:
                    raise DataError(f"graph node {node.node_id} references unknown sequence '{node.sequence_id}'",
                                    where("graph.txt"))
        for image_id in self.pictures:
            if image_id not in self.images:
                raise DataError(f"picture of unknown image '{image_id}'", where("images"))


# -- parsing helpers -----------------------------------------------------------------------------------------------

def _rows(path: Path) -> Iterator[Tuple[int, List[str]]]:
    if not path.is_file():
        raise DataError("missing file", str(path))
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            yield number, text.split()


def _expect(path: Path, line: int, fields: Sequence[str], counts: Sequence[int]) -> None:
    if len(fields) not in counts:
        expected = " or ".join(str(c) for c in counts)
        raise DataError(f"expected {expected} fields, got {len(fields)}", str(path), line, 1)


def _float(token: str, path: Path, line: int, column: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"malformed number '{token}'", str(path), line, column) from None
    if not np.isfinite(value):
        raise DataError(f"non-finite number '{token}'", str(path), line, column)
    return value


def _int(token: str, path: Path, line: int, column: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise DataError(f"malformed integer '{token}'", str(path), line, column) from None


def _flag(token: str, path: Path, line: int, column: int) -> bool:
    if token not in ("0", "1"):
        raise DataError(f"flag must be 0 or 1, got '{token}'", str(path), line, column)
    return token == "1"


def _pose(fields: Sequence[str], start: int, path: Path, line: int) -> Se3Pose:
    values = [_float(tok, path, line, start + k + 1) for k, tok in enumerate(fields[start:start + 7])]
    try:
        return Se3Pose(values[:4], values[4:])
    except ValueError as e:
        raise DataError(str(e), str(path), line, start + 1) from None


def _pose_fields(pose: Se3Pose) -> str:
    return " ".join(fmt(v) for v in list(pose.quaternion) + list(pose.translation))


def _write(path: Path, header: str, lines: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for line in lines:
            f.write(line + "\n")


def _unique(seen: Set[str], key: str, what: str, path: Path, line: int) -> None:
    if key in seen:
        raise DataError(f"duplicate {what} '{key}'", str(path), line, 1)
    seen.add(key)


# -- individual files ----------------------------------------------------------------------------------------------

def read_sensors(path: Path) -> Tuple[Dict[str, CameraIntrinsics], List[str]]:
    cameras, lidars, seen = {}, [], set()
    for line, fields in _rows(path):
        _expect(path, line, fields, (2, 10))
        _unique(seen, fields[0], "sensor", path, line)
        kind = fields[1]
        if kind == "lidar" and len(fields) == 2:
            lidars.append(fields[0])
        elif kind == "camera" and len(fields) == 10:
            width, height = _int(fields[2], path, line, 3), _int(fields[3], path, line, 4)
            values = [_float(tok, path, line, 5 + k) for k, tok in enumerate(fields[4:])]
            try:
                cameras[fields[0]] = CameraIntrinsics(width=width, height=height, fx=values[0], fy=values[1],
                                                      cx=values[2], cy=values[3], k1=values[4], k2=values[5])
            except ValidationError as e:
                raise DataError(f"invalid intrinsics: {e.errors()[0]['msg']}", str(path), line, 3) from None
        else:
            raise DataError(f"unknown sensor kind '{kind}' with {len(fields)} fields", str(path), line, 2)
    return cameras, lidars


def write_sensors(path: Path, cameras: Dict[str, CameraIntrinsics], lidars: Sequence[str]) -> None:
    lines = []
    for camera_id, intr in cameras.items():
        values = " ".join(fmt(v) for v in intr.params())
        lines.append(f"{camera_id} camera {intr.width} {intr.height} {values}")
    lines.extend(f"{lidar_id} lidar" for lidar_id in lidars)
    _write(path, HEADERS["sensors.txt"], lines)


def read_named_poses(path: Path, what: str) -> Dict[str, Se3Pose]:
    out, seen = {}, set()
    for line, fields in _rows(path):
        _expect(path, line, fields, (8,))
        _unique(seen, fields[0], what, path, line)
        out[fields[0]] = _pose(fields, 1, path, line)
    return out


def write_named_poses(path: Path, poses: Dict[str, Se3Pose]) -> None:
    _write(path, HEADERS[path.name], [f"{key} {_pose_fields(pose)}" for key, pose in poses.items()])


def read_stamped_poses(path: Path) -> Trajectory:
    out: Trajectory = {}
    for line, fields in _rows(path):
        _expect(path, line, fields, (9,))
        stamp = _int(fields[1], path, line, 2)
        samples = out.setdefault(fields[0], [])
        if samples and stamp <= samples[-1][0]:
            raise DataError(f"timestamps of sequence '{fields[0]}' must be strictly increasing", str(path), line, 2)
        samples.append((stamp, _pose(fields, 2, path, line)))
    return out


def write_stamped_poses(path: Path, trajectory: Trajectory) -> None:
    lines = [f"{sequence_id} {stamp} {_pose_fields(pose)}"
             for sequence_id, samples in trajectory.items() for stamp, pose in samples]
    _write(path, HEADERS[path.name], lines)


def read_images(path: Path) -> Dict[str, ImageRecord]:
    out, seen = {}, set()
    for line, fields in _rows(path):
        _expect(path, line, fields, (12,))
        _unique(seen, fields[0], "image", path, line)
        out[fields[0]] = ImageRecord(fields[0], fields[1], fields[2], _int(fields[3], path, line, 4),
                                     _pose(fields, 5, path, line), _flag(fields[4], path, line, 5))
    return out


def write_images(path: Path, images: Dict[str, ImageRecord]) -> None:
    lines = [f"{im.image_id} {im.camera_id} {im.sequence_id} {im.stamp_ns} {int(im.optimize_pose)} "
             f"{_pose_fields(im.pose)}" for im in images.values()]
    _write(path, HEADERS["images.txt"], lines)


def read_observations(path: Path) -> List[Observation]:
    out = []
    for line, fields in _rows(path):
        _expect(path, line, fields, (5,))
        pixel = (_float(fields[2], path, line, 3), _float(fields[3], path, line, 4))
        out.append(Observation(fields[0], fields[1], pixel, _flag(fields[4], path, line, 5)))
    return out


def write_observations(path: Path, observations: Sequence[Observation]) -> None:
    lines = [f"{o.image_id} {o.landmark_id} {fmt(o.pixel[0])} {fmt(o.pixel[1])} {int(o.active)}"
             for o in observations]
    _write(path, HEADERS["observations.txt"], lines)


def read_landmarks(path: Path) -> Dict[str, Landmark]:
    out, seen = {}, set()
    for line, fields in _rows(path):
        _expect(path, line, fields, (5,))
        _unique(seen, fields[0], "landmark", path, line)
        position = [_float(tok, path, line, 3 + k) for k, tok in enumerate(fields[2:])]
        out[fields[0]] = Landmark(fields[0], position, _flag(fields[1], path, line, 2))
    return out


def write_landmarks(path: Path, landmarks: Dict[str, Landmark]) -> None:
    lines = [f"{lm.landmark_id} {int(lm.triangulated)} {' '.join(fmt(v) for v in lm.position)}"
             for lm in landmarks.values()]
    _write(path, HEADERS["landmarks.txt"], lines)


def read_outliers(path: Path) -> List[Tuple[str, str]]:
    out = []
    for line, fields in _rows(path):
        _expect(path, line, fields, (2,))
        out.append((fields[0], fields[1]))
    return out


def write_outliers(path: Path, outliers: Sequence[Tuple[str, str]]) -> None:
    _write(path, HEADERS["outliers.txt"], [f"{a} {b}" for a, b in outliers])


def read_graph(path: Path, clouds: Optional[Dict[int, PointCloud]] = None) -> PoseGraph:
    clouds = clouds or {}
    graph = PoseGraph()
    for line, fields in _rows(path):
        try:
            if fields[0] == "NODE":
                _expect(path, line, fields, (12,))
                node_id = _int(fields[1], path, line, 2)
                node = GraphNode(node_id, fields[2], _int(fields[3], path, line, 4),
                                 _pose(fields, 5, path, line), clouds.get(node_id))
                graph.add_node(node)
                if _flag(fields[4], path, line, 5):
                    graph.fix(node_id)
            elif fields[0] == "EDGE":
                _expect(path, line, fields, (32,))
                try:
                    kind = EdgeKind(fields[3])
                except ValueError:
                    raise DataError(f"unknown edge kind '{fields[3]}'", str(path), line, 4) from None
                upper = [_float(tok, path, line, 12 + k) for k, tok in enumerate(fields[11:])]
                info = np.zeros((6, 6))
                info[UPPER] = upper
                info = info + np.triu(info, 1).T
                graph.add_edge(GraphEdge(_int(fields[1], path, line, 2), _int(fields[2], path, line, 3),
                                         _pose(fields, 4, path, line), info, kind))
            else:
                raise DataError(f"unknown record '{fields[0]}'", str(path), line, 1)
        except DataError as e:
            if e.path is None:
                raise DataError(str(e), str(path), line) from None
            raise
    return graph


def write_graph(path: Path, graph: PoseGraph) -> None:
    lines = [f"NODE {n.node_id} {n.sequence_id} {n.stamp_ns} {int(n.node_id in graph.fixed)} {_pose_fields(n.pose)}"
             for n in graph.nodes.values()]
    for e in graph.edges:
        info = " ".join(fmt(v) for v in np.asarray(e.information)[UPPER])
        lines.append(f"EDGE {e.from_id} {e.to_id} {e.kind.value} {_pose_fields(e.relative)} {info}")
    _write(path, HEADERS["graph.txt"], lines)


def read_spline(path: Path) -> Se3Spline:
    rows = list(_rows(path))
    if not rows or rows[0][1][0] != "SPLINE":
        raise DataError("spline file must start with 'SPLINE t0_ns dt_ns'", str(path), rows[0][0] if rows else 1, 1)
    line, head = rows[0]
    _expect(path, line, head, (3,))
    t0, dt = _int(head[1], path, line, 2), _int(head[2], path, line, 3)
    controls = []
    for line, fields in rows[1:]:
        _expect(path, line, fields, (7,))
        controls.append(_pose(fields, 0, path, line))
    try:
        return Se3Spline(t0, dt, controls)
    except TrajforgeError as e:
        raise DataError(str(e), str(path)) from None


def write_spline(path: Path, spline: Se3Spline) -> None:
    lines = [f"SPLINE {spline.t0} {spline.dt}"] + [_pose_fields(p) for p in spline.control_poses]
    _write(path, "# SPLINE t0_ns dt_ns, then one control pose per line: " + POSE_HEADER, lines)


def read_scan(path: Path) -> LidarScan:
    rows = list(_rows(path))
    if not rows or rows[0][1][0] != "SCAN":
        raise DataError("scan file must start with 'SCAN lidar_id timestamp_ns period_s'", str(path), 1, 1)
    line, head = rows[0]
    _expect(path, line, head, (4,))
    stamp, period = _int(head[2], path, line, 3), _float(head[3], path, line, 4)
    data = np.zeros((len(rows) - 1, 4))
    for k, (line, fields) in enumerate(rows[1:]):
        _expect(path, line, fields, (4,))
        data[k] = [_float(tok, path, line, c + 1) for c, tok in enumerate(fields)]
    try:
        return LidarScan(data[:, :3], data[:, 3], stamp, head[1], period)
    except DataError as e:
        raise DataError(str(e), str(path)) from None


def write_scan(path: Path, scan: LidarScan) -> None:
    lines = [f"SCAN {scan.lidar_id} {scan.stamp_ns} {fmt(scan.period)}"]
    lines += [f"{fmt(p[0])} {fmt(p[1])} {fmt(p[2])} {fmt(dt)}" for p, dt in zip(scan.points, scan.offsets)]
    _write(path, "# SCAN lidar_id timestamp_ns period_s, then x y z dt_s per point", lines)


def read_cloud(path: Path) -> PointCloud:
    rows = list(_rows(path))
    if not rows or rows[0][1][0] != "CLOUD":
        raise DataError("cloud file must start with 'CLOUD frame'", str(path), 1, 1)
    line, head = rows[0]
    _expect(path, line, head, (2,))
    points = np.zeros((len(rows) - 1, 3))
    for k, (line, fields) in enumerate(rows[1:]):
        _expect(path, line, fields, (3,))
        points[k] = [_float(tok, path, line, c + 1) for c, tok in enumerate(fields)]
    return PointCloud(points, head[1])


def write_cloud(path: Path, cloud: PointCloud) -> None:
    lines = [f"CLOUD {cloud.frame}"] + [" ".join(fmt(v) for v in p) for p in cloud.points]
    _write(path, "# CLOUD frame, then x y z per point", lines)


def write_cloud_binary(path: Path, cloud: PointCloud) -> None:
    """Little-endian float32 triples behind a 16-byte header; the frame is not stored."""
    path.parent.mkdir(parents=True, exist_ok=True)
    header = CLOUD_HEADER.pack(CLOUD_MAGIC, len(cloud), 3, 0)
    path.write_bytes(header + np.asarray(cloud.points, dtype="<f4").tobytes())


def read_cloud_binary(path: Path, frame: str = "base") -> PointCloud:
    if not path.is_file():
        raise DataError("missing file", str(path))
    raw = path.read_bytes()
    if len(raw) < CLOUD_HEADER.size:
        raise DataError("truncated cloud header", str(path))
    magic, count, columns, _ = CLOUD_HEADER.unpack_from(raw)
    if magic != CLOUD_MAGIC or columns != 3:
        raise DataError(f"not a binary cloud (magic {magic!r}, {columns} columns)", str(path))
    payload = raw[CLOUD_HEADER.size:]
    if len(payload) != count * 12:
        raise DataError(f"cloud payload has {len(payload)} byte(s), expected {count * 12}", str(path))
    points = np.frombuffer(payload, dtype="<f4").reshape(count, 3).astype(float)
    return PointCloud(points, frame)


# -- whole datasets ------------------------------------------------------------------------------------------------

def _read_odometry(path: Path) -> Dict[str, OdometryTrack]:
    tracks = {}
    for sequence_id, samples in read_stamped_poses(path).items():
        try:
            tracks[sequence_id] = OdometryTrack([t for t, _ in samples], [p for _, p in samples])
        except DataError as e:
            raise DataError(f"sequence '{sequence_id}': {e}", str(path)) from None
    return tracks


def _scan_sort_key(path: Path) -> Tuple[str, int]:
    lidar, _, stamp = path.stem.rpartition("_")
    return lidar, int(stamp) if stamp.isdigit() else 0


def _read_clouds(root: Path) -> Dict[int, PointCloud]:
    clouds = {}
    folder = root / "clouds"
    if not folder.is_dir():
        return clouds
    for path in sorted(folder.iterdir(), key=lambda p: (int(p.stem) if p.stem.isdigit() else -1, p.suffix)):
        if not path.stem.isdigit():
            raise DataError("cloud files must be named <node_id>.txt or <node_id>.bin", str(path))
        cloud = read_cloud_binary(path) if path.suffix == ".bin" else read_cloud(path)
        clouds[int(path.stem)] = cloud
    return clouds


def read_ground_truth(root: Path) -> GroundTruth:
    cameras, lidars = read_sensors(root / "sensors.txt")
    outliers = read_outliers(root / "outliers.txt") if (root / "outliers.txt").is_file() else []
    return GroundTruth(cameras, lidars, read_named_poses(root / "rig.txt", "sensor"),
                       read_stamped_poses(root / "trajectory.txt"), read_images(root / "images.txt"),
                       read_landmarks(root / "landmarks.txt"), outliers)


def write_ground_truth(root: Path, gt: GroundTruth) -> None:
    write_sensors(root / "sensors.txt", gt.cameras, gt.lidars)
    write_named_poses(root / "rig.txt", gt.rig)
    write_stamped_poses(root / "trajectory.txt", gt.trajectory)
    write_images(root / "images.txt", gt.images)
    write_landmarks(root / "landmarks.txt", gt.landmarks)
    write_outliers(root / "outliers.txt", gt.outliers)


def read_dataset(path: PathLike) -> Dataset:
    """
    Load and validate a dataset directory.

    Raises:
        DataError: missing file, malformed line or dangling id, located as file:line:column
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError("dataset directory does not exist", str(root))
    cameras, lidars = read_sensors(root / "sensors.txt")
    dataset = Dataset(
        cameras=cameras,
        lidars=lidars,
        rig=read_named_poses(root / "rig.txt", "sensor"),
        sequences=read_named_poses(root / "sequences.txt", "sequence"),
        odometry=_read_odometry(root / "odometry.txt"),
        trajectory=read_stamped_poses(root / "trajectory.txt"),
        images=read_images(root / "images.txt"),
        observations=read_observations(root / "observations.txt"),
        landmarks=read_landmarks(root / "landmarks.txt"),
    )
    scans_dir = root / "scans"
    if scans_dir.is_dir():
        for folder in sorted(p for p in scans_dir.iterdir() if p.is_dir()):
            files = sorted(folder.glob("*.txt"), key=_scan_sort_key)
            dataset.scans[folder.name] = [read_scan(f) for f in files]
    clouds = _read_clouds(root)
    dataset.binary_clouds = any((root / "clouds").glob("*.bin")) if (root / "clouds").is_dir() else False
    if (root / "graph.txt").is_file():
        dataset.graph = read_graph(root / "graph.txt", clouds)
        missing = sorted(set(clouds) - set(dataset.graph.nodes))
        if missing:
            raise DataError(f"cloud of unknown graph node {missing[0]}", str(root / "clouds"))
    elif clouds:
        raise DataError("node clouds present without graph.txt", str(root / "clouds"))
    splines_dir = root / "splines"
    if splines_dir.is_dir():
        for f in sorted(splines_dir.glob("*.txt")):
            dataset.splines[f.stem] = read_spline(f)
    if (root / "report.txt").is_file():
        dataset.report = (root / "report.txt").read_text(encoding="utf-8")
    pictures_dir = root / "images"
    if pictures_dir.is_dir():
        by_name = {sanitize_filename(image_id): image_id for image_id in dataset.images}
        for f in sorted(pictures_dir.glob("*.pgm")):
            if f.stem not in by_name:
                raise DataError(f"picture of unknown image '{f.stem}'", str(f))
            dataset.pictures[by_name[f.stem]] = read_pgm(f)
    if (root / "ground_truth").is_dir():
        dataset.ground_truth = read_ground_truth(root / "ground_truth")
    if (root / "queries").is_dir():
        dataset.queries = read_dataset(root / "queries")
    dataset.validate(root)
    return dataset


def write_dataset(dataset: Dataset, path: PathLike) -> None:
    """
    Write a dataset directory, replacing the directory's dataset files.

    Field order is fixed and floats carry 17 significant digits, so two writes
    of the same dataset produce identical bytes.
    """
    root = Path(path)
    dataset.validate()
    root.mkdir(parents=True, exist_ok=True)
    for sub in ("scans", "clouds", "splines", "images", "ground_truth", "queries"):
        if (root / sub).is_dir():
            shutil.rmtree(root / sub)
    for name in ("graph.txt", "report.txt"):
        (root / name).unlink(missing_ok=True)

    write_sensors(root / "sensors.txt", dataset.cameras, dataset.lidars)
    write_named_poses(root / "rig.txt", dataset.rig)
    write_named_poses(root / "sequences.txt", dataset.sequences)
    odometry = {s: list(zip((int(t) for t in track.times), track.poses)) for s, track in dataset.odometry.items()}
    write_stamped_poses(root / "odometry.txt", odometry)
    write_stamped_poses(root / "trajectory.txt", dataset.trajectory)
    write_images(root / "images.txt", dataset.images)
    write_observations(root / "observations.txt", dataset.observations)
    write_landmarks(root / "landmarks.txt", dataset.landmarks)

    for sequence_id, scans in dataset.scans.items():
        folder = root / "scans" / sequence_id
        folder.mkdir(parents=True, exist_ok=True)
        for scan in scans:
            write_scan(folder / f"{scan.lidar_id}_{scan.stamp_ns}.txt", scan)
    if dataset.graph is not None:
        write_graph(root / "graph.txt", dataset.graph)
        for node in dataset.graph.nodes.values():
            if node.cloud is None:
                continue
            if dataset.binary_clouds:
                write_cloud_binary(root / "clouds" / f"{node.node_id}.bin", node.cloud)
            else:
                write_cloud(root / "clouds" / f"{node.node_id}.txt", node.cloud)
    for sequence_id, spline in dataset.splines.items():
        write_spline(root / "splines" / f"{sequence_id}.txt", spline)
    if dataset.report is not None:
        (root / "report.txt").write_text(dataset.report, encoding="utf-8")
    if dataset.pictures:
        (root / "images").mkdir(parents=True, exist_ok=True)
        for image_id, picture in dataset.pictures.items():
            write_pgm(picture, root / "images" / f"{sanitize_filename(image_id)}.pgm")
    if dataset.ground_truth is not None:
        write_ground_truth(root / "ground_truth", dataset.ground_truth)
    if dataset.queries is not None:
        write_dataset(dataset.queries, root / "queries")


# -- localization estimates ----------------------------------------------------------------------------------------

ESTIMATE_COLUMNS = ["query_id", "localized", "inliers", "qw", "qx", "qy", "qz", "tx", "ty", "tz"]


def write_estimates(path: PathLike, estimates: Dict[str, Tuple[Optional[Se3Pose], int]]) -> None:
    """CSV of query_id, localized flag, inlier count and the camera pose T_WC (empty when not localized)."""
    rows = []
    for query_id, (pose, inliers) in estimates.items():
        values = [None] * 7 if pose is None else list(pose.quaternion) + list(pose.translation)
        rows.append([query_id, int(pose is not None), int(inliers)] + values)
    pd.DataFrame(rows, columns=ESTIMATE_COLUMNS).to_csv(path, index=False)


def read_estimates(path: PathLike) -> Dict[str, Optional[Se3Pose]]:
    """
    Estimated camera poses by query id; not-localized rows map to None.

    An empty file yields no estimates.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError("missing estimate file", str(path))
    try:
        frame = pd.read_csv(path, dtype={"query_id": str})
    except pd.errors.EmptyDataError:
        return {}
    missing = [c for c in ESTIMATE_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"estimate file lacks column(s) {missing}", str(path), 1)
    out: Dict[str, Optional[Se3Pose]] = {}
    for k, row in enumerate(frame.itertuples(index=False), start=2):
        if not row.localized:
            out[row.query_id] = None
            continue
        try:
            out[row.query_id] = Se3Pose([row.qw, row.qx, row.qy, row.qz], [row.tx, row.ty, row.tz])
        except ValueError as e:
            raise DataError(str(e), str(path), k) from None
    return out
