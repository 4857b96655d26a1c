"""HTTP facade for the review UI: slides, reports, heatmaps, tiles, and an
append-only log of operator decisions."""

from __future__ import annotations

import datetime as _dt
import json
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .annotations import CLASS_NAMES
from .pyramid import PyramidError, TileAddress, open_slide, read_tile, tile_to_png
from .triage import SlideReport

DISPOSITIONS = ("release", "rescan", "recut", "restain", "recoverslip", "reembed")
DECISIONS_FILE = "decisions.jsonl"


class ServiceError(Exception):
    def __init__(self, status_code: int, error: str, detail: str):
        super().__init__(detail)
        self.status_code = status_code
        self.error = error
        self.detail = detail


class VerdictIn(BaseModel):
    level: int
    col: int
    row: int
    confirmed: bool
    corrected_class: str | None = None


class ReviewIn(BaseModel):
    reviewer_id: str
    disposition: str
    verdicts: list[VerdictIn] = Field(default_factory=list)
    note: str = ""


class ReportStore:
    """Reports, pyramids, and the decision log under one run directory."""

    def __init__(self, run_dir: str | Path, corpus_dir: str | Path | None = None):
        self.run_dir = Path(run_dir)
        self.reports_dir = self.run_dir / "reports"
        if corpus_dir is None:
            config_path = self.run_dir / "config.json"
            corpus_rel = "corpus"
            if config_path.is_file():
                corpus_rel = json.loads(config_path.read_text("utf-8")).get("corpus_dir", "corpus")
            corpus_dir = self.run_dir / corpus_rel
        self.corpus_dir = Path(corpus_dir)
        self.decisions_path = self.run_dir / DECISIONS_FILE
        self._write_lock = threading.Lock()
        self._pyramids: dict[str, object] = {}

    def slide_ids(self) -> list[str]:
        if not self.reports_dir.is_dir():
            return []
        return sorted(
            p.name for p in self.reports_dir.iterdir() if (p / "report.json").is_file()
        )

    def report_path(self, slide_id: str) -> Path:
        path = self.reports_dir / slide_id / "report.json"
        if not path.is_file():
            raise ServiceError(404, "not_found", f"no report for slide {slide_id!r}")
        return path

    def heatmap_path(self, slide_id: str) -> Path:
        path = self.reports_dir / slide_id / "heatmap.png"
        if not path.is_file():
            raise ServiceError(404, "not_found", f"no heatmap for slide {slide_id!r}")
        return path

    def load_report(self, slide_id: str) -> SlideReport:
        return SlideReport.from_dict(json.loads(self.report_path(slide_id).read_text("utf-8")))

    def pyramid(self, slide_id: str):
        handle = self._pyramids.get(slide_id)
        if handle is None:
            slide_dir = self.corpus_dir / slide_id
            if not (slide_dir / "pyramid.json").is_file():
                raise ServiceError(404, "not_found", f"no slide container for {slide_id!r}")
            handle = open_slide(slide_dir)
            self._pyramids[slide_id] = handle
        return handle

    def decisions(self) -> list[dict]:
        if not self.decisions_path.is_file():
            return []
        return [
            json.loads(line)
            for line in self.decisions_path.read_text("utf-8").splitlines()
            if line.strip()
        ]

    def reviewed_slides(self) -> set[str]:
        return {d["slide_id"] for d in self.decisions()}

    def append_decision(self, record: dict) -> str:
        with self._write_lock:
            decision_id = f"d-{len(self.decisions()) + 1:06d}"
            record = {"id": decision_id, **record}
            with open(self.decisions_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        return decision_id


def create_app(
    run_dir: str | Path,
    corpus_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    store = ReportStore(run_dir, corpus_dir)
    app = FastAPI(title="slideqc review service")
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def _service_error(_: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status_code, content={"error": exc.error, "detail": exc.detail}
        )

    @app.get("/api/slides")
    def list_slides() -> list[dict]:
        reviewed = store.reviewed_slides()
        entries = []
        for slide_id in store.slide_ids():
            report = store.load_report(slide_id)
            entries.append(
                {
                    "slide_id": slide_id,
                    "routing": report.routing,
                    "flags": report.flags,
                    "flag_counts": {name: report.class_counts[name] for name in report.flags},
                    "reviewed": slide_id in reviewed,
                }
            )
        return entries

    @app.get("/api/slides/{slide_id}/report")
    def get_report(slide_id: str):
        return FileResponse(store.report_path(slide_id), media_type="application/json")

    @app.get("/api/slides/{slide_id}/heatmap.png")
    def get_heatmap(slide_id: str):
        return FileResponse(store.heatmap_path(slide_id), media_type="image/png")

    @app.get("/api/slides/{slide_id}/tiles/{level}/{col}/{row}.png")
    def get_tile(slide_id: str, level: int, col: int, row: int):
        report = store.load_report(slide_id)
        if level != report.level:
            raise ServiceError(400, "bad_request",
                               f"level L{level} is not the report grid level L{report.level}")
        if not (0 <= col < report.cols and 0 <= row < report.rows):
            raise ServiceError(400, "bad_request",
                               f"tile ({col},{row}) outside {report.cols}x{report.rows} grid")
        pyramid = store.pyramid(slide_id)
        address = TileAddress(level=level, tile_size=report.tile_size, col=col, row=row,
                              valid_width=report.tile_size, valid_height=report.tile_size)
        try:
            tile = read_tile(pyramid, address)
        except PyramidError as exc:
            raise ServiceError(400, "bad_request", str(exc)) from exc
        return Response(content=tile_to_png(tile), media_type="image/png")

    @app.post("/api/slides/{slide_id}/review")
    def post_review(slide_id: str, review: ReviewIn):
        report = store.load_report(slide_id)  # 404 when the slide is unscreened
        if review.disposition not in DISPOSITIONS:
            raise ServiceError(400, "invalid_disposition",
                               f"disposition must be one of {list(DISPOSITIONS)}")
        for verdict in review.verdicts:
            if verdict.level != report.level or not (
                0 <= verdict.col < report.cols and 0 <= verdict.row < report.rows
            ):
                raise ServiceError(400, "invalid_verdict",
                                   f"tile (L{verdict.level},{verdict.col},{verdict.row}) "
                                   f"not in the report grid")
            if verdict.corrected_class is not None and verdict.corrected_class not in CLASS_NAMES:
                raise ServiceError(400, "invalid_verdict",
                                   f"unknown corrected_class {verdict.corrected_class!r}")
        decision_id = store.append_decision(
            {
                "slide_id": slide_id,
                "reviewer_id": review.reviewer_id,
                "disposition": review.disposition,
                "verdicts": [v.model_dump() for v in review.verdicts],
                "note": review.note,
                "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            }
        )
        return {"decision_id": decision_id}

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
